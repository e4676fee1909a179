//! Parsing judge replies: wrapped JSON, string scores, out-of-range clamping,
//! and the stage-specific prompt the LLM judge would send.
//!
//!     cargo run --example judge_parse

use dualpool::judge::{parse_evaluation, stage_criteria};

fn main() {
    let replies = [
        r#"{"score": 8.5, "stage_quality": "good", "reasoning": "plan is sound"}"#,
        "Here is my evaluation:\n```json\n{\"score\": \"6\", \"reasoning\": \"uses {braces} in text\"}\n```",
        r#"{"score": 14, "stage_quality": "excellent"}"#,
        "no structured output at all",
    ];
    for reply in replies {
        match parse_evaluation(reply) {
            Ok(e) => println!("score {:>4}  quality {:?}", e.score, e.stage_quality),
            Err(err) => println!("error: {err}"),
        }
    }
    println!();
    for stage in 1..=3 {
        let (name, criteria) = stage_criteria(stage, 3);
        println!("stage {stage}: {name}\n{criteria}\n");
    }
}
