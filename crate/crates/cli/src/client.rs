use std::path::Path;

use protofuse::agents::{LiveClient, LlmClient, RetryPolicy, Script, ScriptedClient};
use protofuse::{Error, Result};

/// Builds the client named by `live` or `scripted:<path>`.
pub fn from_spec(spec: &str, retry: RetryPolicy) -> Result<Box<dyn LlmClient>> {
    if spec == "live" {
        return Ok(Box::new(LiveClient::from_env(retry)?));
    }
    match spec.strip_prefix("scripted:") {
        Some(path) if !path.is_empty() => Ok(Box::new(ScriptedClient::new(Script::from_path(Path::new(path))?))),
        _ => Err(Error::InvalidInput(format!(
            "unknown client `{spec}`; expected `live` or `scripted:<path>`"
        ))),
    }
}
