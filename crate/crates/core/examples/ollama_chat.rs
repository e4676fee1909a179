//! One chat exchange and one embedding through the HTTP client.
//!
//! Talks to `DUALPOOL_LLM_BASE_URL` when it is set; otherwise a local mock
//! server answers with canned Ollama-shaped replies.
//!
//!     cargo run --example ollama_chat

use dualpool::llm::{EndpointConfig, LlmClient, MockServer, ENV_BASE_URL};

fn main() {
    let mut cfg = EndpointConfig::default().with_env_overrides();
    let _mock = if std::env::var(ENV_BASE_URL).is_err() {
        let mock = MockServer::start(vec![
            (
                200,
                r#"{"message":{"role":"assistant","content":"4"},"prompt_eval_count":21,"eval_count":1}"#.into(),
            ),
            (200, r#"{"embedding":[3.0,4.0]}"#.into()),
        ])
        .expect("mock server");
        cfg.base_url = mock.base_url();
        println!("no endpoint configured, using mock at {}", cfg.base_url);
        Some(mock)
    } else {
        None
    };

    let client = LlmClient::new(cfg).expect("valid config");
    match client.chat("You are a careful assistant.", "What is 2 + 2? Reply with the number only.") {
        Ok(x) => println!("reply {:?} after {} attempt(s), usage {:?}", x.response, x.attempts, x.usage()),
        Err(e) => println!("chat failed: {e}"),
    }
    match client.embed_remote("dual pool memory") {
        Ok(e) => println!("embedding of dimension {} with norm {:.6}", e.dimension(), e.norm()),
        Err(e) => println!("embedding failed: {e}"),
    }
    println!("total tokens {}", client.usage().total());
}
