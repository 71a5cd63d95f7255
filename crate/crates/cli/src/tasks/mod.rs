//! One runner per task. Each reads its inputs from the resolved config,
//! writes artifacts into the output directory and records them in the log.

mod embed;
mod eval;
mod io;
mod prompt;
mod taxo;
mod text;
mod typing;

use ontolearn::fewshot::{ChatCompletion, CompletionBackend, DecodeParams, MockCompletion};
use ontolearn::service::ServiceClient;

use crate::config::{Resolved, Task};
use crate::error::RunError;
use crate::manifest::RunLog;

pub use io::Out;

pub fn run(run: &Resolved) -> Result<RunLog, RunError> {
    let mut log = RunLog::default();
    let mut out = Out {
        dir: &run.out_dir,
        log: &mut log,
    };
    match run.task() {
        Task::Repair => text::repair(run, &mut out)?,
        Task::Tfidf => text::tfidf(run, &mut out)?,
        Task::EmbedFetch => embed::embed_fetch(run, &mut out)?,
        Task::Knn => embed::knn(run, &mut out)?,
        Task::PromptA => prompt::prompt_a(run, &mut out)?,
        Task::PromptB => prompt::prompt_b(run, &mut out)?,
        Task::Zeroshot => typing::zeroshot(run, &mut out)?,
        Task::Ensemble => typing::ensemble(run, &mut out)?,
        Task::Distmult => typing::distmult(run, &mut out)?,
        Task::TaxoTrain => taxo::train(run, &mut out)?,
        Task::TaxoGrid => taxo::grid(run, &mut out)?,
        Task::TaxoPredict => taxo::predict(run, &mut out)?,
        Task::Eval => eval::eval(run, &mut out)?,
    }
    Ok(log)
}

/// HTTP client for `suffix` under the configured endpoint.
fn service(run: &Resolved, suffix: &str) -> Result<ServiceClient, RunError> {
    let url = run.endpoint_url(suffix).ok_or_else(|| {
        RunError::Config(format!(
            "endpoint: task {} needs --endpoint, ONTOLEARN_ENDPOINT or --mock-llm",
            run.task().name()
        ))
    })?;
    Ok(ServiceClient::new(url).with_api_key(run.api_key.clone()))
}

fn completion_backend(run: &Resolved, params: &DecodeParams) -> Result<Box<dyn CompletionBackend>, RunError> {
    if run.config.mock_llm {
        return Ok(Box::new(MockCompletion));
    }
    if params.model.is_empty() {
        return Err(RunError::Config("params.model is required for the chat service".into()));
    }
    Ok(Box::new(ChatCompletion {
        client: service(run, "chat/completions")?,
        params: params.clone(),
    }))
}
