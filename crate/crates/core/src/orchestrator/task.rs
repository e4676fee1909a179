//! Synthetic task workloads.
//!
//! Each family owns a disjoint block of vocabulary, so hash embeddings of two
//! tasks from one family are close and tasks from different families are
//! nearly orthogonal. A stage subtask appends a stage-specific phrase to the
//! prompt, which keeps the same family at another stage below the default
//! retrieval threshold.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;

/// Words per family prompt.
pub const FAMILY_WORDS: usize = 12;
/// Per-task random words appended to the family words.
pub const SLOT_WORDS: usize = 2;
/// Words in a stage phrase.
pub const STAGE_WORDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    /// Position in the stream; doubles as the creation timestamp of pieces minted while solving it.
    pub index: u64,
    pub family_id: u32,
    pub prompt: String,
    pub hidden_answer: String,
}

impl TaskSpec {
    /// Text an agent works on at `stage_index`, also used as the retrieval query.
    pub fn stage_subtask(&self, stage_index: u32) -> String {
        format!("{} {}", self.prompt, stage_phrase(stage_index))
    }

    /// The single wrong answer every failed attempt on this task converges to.
    pub fn distractor(&self) -> String {
        format!("distractor-{}", self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    /// Every family appears `repeats` times, in shuffled order.
    Repeated,
    /// Tasks from known families mixed with never-seen families.
    Mixed,
    /// Independent uniform draws over the families.
    Uniform,
}

/// Synthetic environment: workload shape and the scripted policy's success model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub workload: Workload,
    pub families: u32,
    pub repeats: u32,
    /// Stream length for the mixed and uniform workloads.
    pub tasks: u32,
    /// Share of novel-family tasks in the mixed workload.
    pub novel_fraction: f64,
    pub guided_success: f64,
    pub unguided_success: f64,
    pub explore_success: f64,
    /// Minimum quality for a retrieved piece to count as reusable guidance.
    pub reuse_threshold: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            workload: Workload::Repeated,
            families: 10,
            repeats: 20,
            tasks: 200,
            novel_fraction: 0.3,
            guided_success: 0.9,
            unguided_success: 0.4,
            explore_success: 0.55,
            reuse_threshold: 5.0,
        }
    }
}

impl EnvConfig {
    pub fn task_count(&self) -> usize {
        match self.workload {
            Workload::Repeated => self.families as usize * self.repeats as usize,
            Workload::Mixed | Workload::Uniform => self.tasks as usize,
        }
    }
}

pub fn family_words(family_id: u32) -> Vec<String> {
    (0..FAMILY_WORDS).map(|j| format!("fam{family_id}x{j}")).collect()
}

pub fn stage_phrase(stage_index: u32) -> String {
    (0..STAGE_WORDS)
        .map(|j| format!("stage{stage_index}x{j}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders task `index` of `family_id`. Slot words and the hidden answer come
/// from a stream keyed by the seed and the index.
pub fn render_task(seed: u64, index: u64, family_id: u32) -> TaskSpec {
    let mut r = rng::keyed(seed, &[rng::PURPOSE_WORKLOAD, index]);
    let mut words = family_words(family_id);
    for _ in 0..SLOT_WORDS {
        words.push(format!("slot{}", r.gen::<u32>()));
    }
    TaskSpec {
        task_id: format!("task-{index:04}"),
        index,
        family_id,
        prompt: words.join(" "),
        hidden_answer: format!("answer-{family_id}-{}", r.gen_range(0..1000u32)),
    }
}

/// Draws one task with a uniformly chosen family.
pub fn generate_task<R: Rng + ?Sized>(env: &EnvConfig, index: u64, seed: u64, rng: &mut R) -> TaskSpec {
    assert!(env.families >= 1, "at least one family is required");
    let family = rng.gen_range(0..env.families);
    render_task(seed, index, family)
}

/// Family id of every task in the stream, in order.
pub fn family_schedule(env: &EnvConfig, seed: u64) -> Vec<u32> {
    let mut r = rng::keyed(seed, &[rng::PURPOSE_WORKLOAD]);
    match env.workload {
        Workload::Repeated => {
            let mut order: Vec<u32> = (0..env.families)
                .flat_map(|f| std::iter::repeat_n(f, env.repeats as usize))
                .collect();
            order.shuffle(&mut r);
            order
        }
        Workload::Mixed => {
            let mut next_novel = env.families;
            (0..env.tasks)
                .map(|_| {
                    if r.gen::<f64>() < env.novel_fraction {
                        next_novel += 1;
                        next_novel - 1
                    } else {
                        r.gen_range(0..env.families)
                    }
                })
                .collect()
        }
        Workload::Uniform => (0..env.tasks).map(|_| r.gen_range(0..env.families)).collect(),
    }
}

/// The full task stream for a seed.
pub fn task_stream(env: &EnvConfig, seed: u64) -> Vec<TaskSpec> {
    family_schedule(env, seed)
        .into_iter()
        .enumerate()
        .map(|(i, f)| render_task(seed, i as u64, f))
        .collect()
}
