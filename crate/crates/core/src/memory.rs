//! Per-agent dual-pool memory.
//!
//! Every agent owns one [`DualPoolMemory`]: a persistent exploitation pool
//! (E-pool) of consolidated pieces and a per-task exploration pool (X-pool)
//! that collects freshly minted pieces until [`DualPoolMemory::consolidate`].

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_sim, Embedding, EmbeddingError};
use crate::router::RouterState;

/// Default Top-K size.
pub const DEFAULT_TOP_K: usize = 3;
/// Default similarity threshold for E-pool reuse.
pub const DEFAULT_TAU: f64 = 0.6;
pub const MAX_QUALITY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent-{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("piece id {0:?} already present in this agent's pools")]
    DuplicateId(String),
    #[error("piece {0:?} must have origin Exploratory to enter the X-pool")]
    NotExploratory(String),
    #[error("no exploratory piece with id {0:?}")]
    UnknownPiece(String),
    #[error("embedding dimension mismatch for piece {id:?}: store uses {expected}, piece has {actual}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        actual: usize,
    },
    #[error("top-k must be at least 1")]
    InvalidK,
    #[error("similarity threshold {0} outside [-1, 1]")]
    InvalidTau(f64),
    #[error("invalid memory piece {id:?}: {reason}")]
    InvalidPiece { id: String, reason: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Decompose,
    DirectAnswer,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Consolidated,
    Exploratory,
}

/// One sub-task handed to an agent by a decomposition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub subtask: String,
    pub agent: AgentId,
}

/// What the agent did at one stage, plus the allocation it passed downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub action_type: ActionType,
    pub payload: String,
    #[serde(default)]
    pub allocation: Vec<Assignment>,
    pub stage_index: u32,
}

impl TrajectoryRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.stage_index < 1 {
            return Err("stage_index must be >= 1".into());
        }
        if !self.allocation.is_empty() && self.action_type != ActionType::Decompose {
            return Err("allocation is only allowed on decompose actions".into());
        }
        Ok(())
    }
}

/// A stored experience: the context it came from and how it was handled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryPiece {
    pub id: String,
    pub context_prototype: String,
    pub context_embedding: Embedding,
    pub trajectory: TrajectoryRecord,
    /// The agent's own rationale for the action.
    pub commentary: String,
    pub quality: f64,
    /// Task index at which the piece was minted.
    pub created_at: u64,
    pub origin: Origin,
}

impl MemoryPiece {
    pub fn validate(&self) -> Result<(), MemoryError> {
        let invalid = |reason: String| MemoryError::InvalidPiece {
            id: self.id.clone(),
            reason,
        };
        if !(0.0..=MAX_QUALITY).contains(&self.quality) {
            return Err(invalid(format!("quality {} outside [0, 10]", self.quality)));
        }
        if (self.context_embedding.norm() - 1.0).abs() > crate::embedding::UNIT_NORM_TOLERANCE {
            return Err(invalid("context embedding is not unit norm".into()));
        }
        self.trajectory.validate().map_err(invalid)
    }
}

/// A retrieval hit.
#[derive(Debug, Clone, Copy)]
pub struct Scored<'a> {
    pub piece: &'a MemoryPiece,
    pub similarity: f64,
}

fn rank(a: &Scored<'_>, b: &Scored<'_>) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.piece.created_at.cmp(&b.piece.created_at))
        .then_with(|| a.piece.id.cmp(&b.piece.id))
}

/// Top-`k` pieces of `pool` whose cosine similarity to `query` is at least `tau`.
///
/// Ordered by similarity descending, then `created_at` ascending, then id.
/// An empty result means nothing is similar enough and the caller should fall
/// back to exploration.
pub fn retrieve<'a>(
    pool: &'a [MemoryPiece],
    query: &Embedding,
    k: usize,
    tau: f64,
) -> Result<Vec<Scored<'a>>, MemoryError> {
    if k == 0 {
        return Err(MemoryError::InvalidK);
    }
    if !(-1.0..=1.0).contains(&tau) {
        return Err(MemoryError::InvalidTau(tau));
    }
    let mut hits = Vec::new();
    for piece in pool {
        let similarity = cosine_sim(query, &piece.context_embedding).map_err(|_| {
            MemoryError::DimensionMismatch {
                id: piece.id.clone(),
                expected: query.dimension(),
                actual: piece.context_embedding.dimension(),
            }
        })?;
        if similarity >= tau {
            hits.push(Scored { piece, similarity });
        }
    }
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, rank);
        hits.truncate(k);
    }
    hits.sort_by(rank);
    Ok(hits)
}

/// An agent's private E-pool, X-pool and router.
#[derive(Debug, Clone)]
pub struct DualPoolMemory {
    agent_id: AgentId,
    e_pool: Vec<MemoryPiece>,
    x_pool: Vec<MemoryPiece>,
    ids: HashSet<String>,
    pub router: RouterState,
}

impl PartialEq for DualPoolMemory {
    fn eq(&self, other: &Self) -> bool {
        self.agent_id == other.agent_id
            && self.router == other.router
            && self.e_pool == other.e_pool
            && self.x_pool == other.x_pool
    }
}

impl DualPoolMemory {
    pub fn new(agent_id: AgentId, router: RouterState) -> Self {
        Self {
            agent_id,
            e_pool: Vec::new(),
            x_pool: Vec::new(),
            ids: HashSet::new(),
            router,
        }
    }

    /// Rebuilds a memory from stored parts, checking every invariant.
    pub fn from_parts(
        agent_id: AgentId,
        router: RouterState,
        e_pool: Vec<MemoryPiece>,
        x_pool: Vec<MemoryPiece>,
    ) -> Result<Self, MemoryError> {
        let mut memory = Self::new(agent_id, router);
        for piece in e_pool {
            memory.restore_consolidated(piece)?;
        }
        for piece in x_pool {
            memory.add_exploratory(piece)?;
        }
        Ok(memory)
    }

    pub fn agent_id(&self) -> AgentId {
        self.agent_id
    }

    pub fn e_pool(&self) -> &[MemoryPiece] {
        &self.e_pool
    }

    pub fn x_pool(&self) -> &[MemoryPiece] {
        &self.x_pool
    }

    pub fn len(&self) -> usize {
        self.e_pool.len() + self.x_pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Embedding dimension shared by every stored piece, if any piece exists.
    pub fn dimension(&self) -> Option<usize> {
        self.e_pool
            .first()
            .or_else(|| self.x_pool.first())
            .map(|p| p.context_embedding.dimension())
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    fn admit(&self, piece: &MemoryPiece) -> Result<(), MemoryError> {
        piece.validate()?;
        if self.contains_id(&piece.id) {
            return Err(MemoryError::DuplicateId(piece.id.clone()));
        }
        if let Some(expected) = self.dimension() {
            let actual = piece.context_embedding.dimension();
            if actual != expected {
                return Err(MemoryError::DimensionMismatch {
                    id: piece.id.clone(),
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn restore_consolidated(&mut self, piece: MemoryPiece) -> Result<(), MemoryError> {
        if piece.origin != Origin::Consolidated {
            return Err(MemoryError::InvalidPiece {
                id: piece.id,
                reason: "E-pool pieces must have origin Consolidated".into(),
            });
        }
        if !self.x_pool.is_empty() {
            return Err(MemoryError::InvalidPiece {
                id: piece.id,
                reason: "E-pool pieces must be restored before the X-pool".into(),
            });
        }
        self.admit(&piece)?;
        self.ids.insert(piece.id.clone());
        self.e_pool.push(piece);
        Ok(())
    }

    /// Top-K search over the E-pool only.
    pub fn retrieve(
        &self,
        query: &Embedding,
        k: usize,
        tau: f64,
    ) -> Result<Vec<Scored<'_>>, MemoryError> {
        retrieve(&self.e_pool, query, k, tau)
    }

    /// Appends a freshly minted piece to the X-pool.
    pub fn add_exploratory(&mut self, piece: MemoryPiece) -> Result<(), MemoryError> {
        if piece.origin != Origin::Exploratory {
            return Err(MemoryError::NotExploratory(piece.id));
        }
        self.admit(&piece)?;
        self.ids.insert(piece.id.clone());
        self.x_pool.push(piece);
        Ok(())
    }

    /// Overwrites the quality of an X-pool piece once its outcome is known.
    pub fn set_exploratory_quality(&mut self, id: &str, quality: f64) -> Result<(), MemoryError> {
        if !(0.0..=MAX_QUALITY).contains(&quality) {
            return Err(MemoryError::InvalidPiece {
                id: id.to_string(),
                reason: format!("quality {quality} outside [0, 10]"),
            });
        }
        let piece = self
            .x_pool
            .iter_mut()
            .find(|p| p.id == id)
            .ok_or_else(|| MemoryError::UnknownPiece(id.to_string()))?;
        piece.quality = quality;
        Ok(())
    }

    /// Moves the whole X-pool into the E-pool and returns how many pieces moved.
    pub fn consolidate(&mut self) -> usize {
        let moved = self.x_pool.len();
        self.e_pool.extend(self.x_pool.drain(..).map(|mut p| {
            p.origin = Origin::Consolidated;
            p
        }));
        moved
    }
}
