//! Top-K retrieval from an agent's E-pool with a similarity threshold.
//!
//!     cargo run --example retrieve_topk

use dualpool::embedding::{Embedder, HashEmbedder};
use dualpool::memory::{ActionType, AgentId, DualPoolMemory, MemoryPiece, Origin, TrajectoryRecord};
use dualpool::router::RouterState;

fn piece(embedder: &HashEmbedder, id: &str, context: &str, created_at: u64) -> MemoryPiece {
    MemoryPiece {
        id: id.into(),
        context_prototype: context.into(),
        context_embedding: embedder.embed(context).unwrap(),
        trajectory: TrajectoryRecord {
            action_type: ActionType::DirectAnswer,
            payload: format!("answer for {id}"),
            allocation: Vec::new(),
            stage_index: 1,
        },
        commentary: String::new(),
        quality: 8.0,
        created_at,
        origin: Origin::Exploratory,
    }
}

fn main() {
    let embedder = HashEmbedder::default();
    let mut memory = DualPoolMemory::new(AgentId(0), RouterState::default());
    let corpus = [
        ("p0", "sort the list of numbers in ascending order"),
        ("p1", "sort the list of words alphabetically"),
        ("p2", "count the vowels in a sentence"),
        ("p3", "sort the list of numbers in ascending order"),
        ("p4", "find the shortest path between two cities"),
    ];
    for (t, (id, text)) in corpus.iter().enumerate() {
        memory.add_exploratory(piece(&embedder, id, text, t as u64)).unwrap();
    }
    memory.consolidate();

    let query = embedder.embed("sort the numbers in ascending order").unwrap();
    for tau in [0.6, 0.3] {
        println!("k = 3, tau = {tau}");
        let hits = memory.retrieve(&query, 3, tau).unwrap();
        if hits.is_empty() {
            println!("  no hits: the agent would explore");
        }
        // p0 and p3 tie on similarity; the older piece ranks first.
        for h in hits {
            println!("  {:.4}  {}  {}", h.similarity, h.piece.id, h.piece.context_prototype);
        }
    }
}
