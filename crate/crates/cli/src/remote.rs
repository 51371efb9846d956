use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Subcommand};
use mixdr_client::api::CreateSession;
use mixdr_client::Client;
use mixdr_core::data::DEFAULT_LABEL_COLUMN;
use mixdr_core::pipeline::FitSpec;
use serde_json::Value;

use crate::commands::{parse_marginal, parse_models};
use crate::config::Config;
use crate::output::Run;
use crate::{CliError, Exit, FitOptions};

#[derive(Args, Debug)]
pub struct RemoteArgs {
    /// Service base URL.
    #[arg(long)]
    pub url: Option<String>,
    /// Write the response here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: RemoteCommand,
}

#[derive(Subcommand, Debug)]
pub enum RemoteCommand {
    Health,
    /// Upload a CSV and fit a session.
    Create {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels_col: Option<String>,
        #[command(flatten)]
        fit: FitOptions,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = ["full", "diagonal"])]
        marginal: Option<String>,
        /// Return once the server accepts the job, without waiting.
        #[arg(long = "async")]
        run_async: bool,
        /// With --async, poll until the fit finishes or this many seconds pass.
        #[arg(long)]
        wait: Option<u64>,
    },
    List,
    Status {
        #[arg(long)]
        session: String,
    },
    Projection {
        #[arg(long)]
        session: String,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long)]
        dims: Option<usize>,
    },
    Boundary {
        #[arg(long)]
        session: String,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long)]
        grid: Option<usize>,
    },
    Lr {
        #[arg(long)]
        session: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        d_eval: Option<usize>,
    },
    Delete {
        #[arg(long)]
        session: String,
    },
}

fn to_value(v: impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("response serializes")
}

pub fn run(cfg: &Config, a: RemoteArgs) -> Result<(), CliError> {
    let mut s = cfg.section("remote", &["url"])?;
    let url = s.or("url", a.url, "http://127.0.0.1:8080".to_string())?;
    let client = Client::new(url);
    let mut run = Run::new("remote", s.resolved(), None);

    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new(Exit::Internal, "internal", e.to_string()))?;
    let response: Value = match a.command {
        RemoteCommand::Create {
            data,
            labels_col,
            fit,
            seed,
            marginal,
            run_async,
            wait,
        } => {
            let csv = run.read(&data)?;
            let spec = FitSpec {
                family: match &fit.family {
                    Some(f) => f.parse().map_err(|e: mixdr_core::Error| CliError::usage(e.to_string()))?,
                    None => FitSpec::default().family,
                },
                models: fit.models.as_deref().map(parse_models).transpose()?,
                g_max: fit.gmax.unwrap_or(FitSpec::default().g_max),
                seed: seed.unwrap_or(0),
                marginal: marginal.as_deref().map(parse_marginal).transpose()?.unwrap_or_default(),
                priors: None,
            };
            let req = CreateSession {
                csv,
                label_column: Some(labels_col.unwrap_or_else(|| DEFAULT_LABEL_COLUMN.into())),
                fit: spec,
                run_async,
            };
            rt.block_on(async {
                let info = client.create_session(&req).await?;
                match wait {
                    Some(secs) if run_async => {
                        client
                            .wait_ready(&info.session_id, Duration::from_millis(100), Duration::from_secs(secs))
                            .await
                    }
                    _ => Ok(info),
                }
            })
            .map(to_value)?
        }
        RemoteCommand::Health => rt.block_on(client.health()).map(to_value)?,
        RemoteCommand::List => rt.block_on(client.sessions()).map(to_value)?,
        RemoteCommand::Status { session } => rt.block_on(client.session(&session)).map(to_value)?,
        RemoteCommand::Projection { session, lambda, dims } => {
            rt.block_on(client.projection(&session, lambda, dims)).map(to_value)?
        }
        RemoteCommand::Boundary { session, lambda, grid } => {
            rt.block_on(client.boundary(&session, lambda, grid)).map(to_value)?
        }
        RemoteCommand::Lr { session, steps, d_eval } => {
            rt.block_on(client.lr(&session, steps, d_eval)).map(to_value)?
        }
        RemoteCommand::Delete { session } => {
            rt.block_on(client.delete(&session))?;
            serde_json::json!({"deleted": session})
        }
    };

    let text = serde_json::to_string_pretty(&response).expect("response serializes");
    match &a.out {
        Some(path) => {
            run.write(path, text.as_bytes())?;
            run.finish()?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{text}");
        }
    }
    Ok(())
}
