//! Training configuration resolution: flags over config file over defaults.

use std::fs;
use std::path::Path;

use anyhow::Context;
use gaussq_core::query::QueryType;
use gaussq_core::trainer::TrainConfig;
use serde::Serialize;

use crate::args::HyperArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Flag,
}

#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub config: TrainConfig,
    /// Where each field's value came from, in field order.
    pub sources: Vec<(&'static str, Source)>,
}

pub fn parse_types(s: &str) -> anyhow::Result<Vec<QueryType>> {
    if s.trim() == "all" {
        return Ok(QueryType::ALL.to_vec());
    }
    Ok(QueryType::parse_list(s)?)
}

const FIELDS: [&str; 15] = [
    "dim",
    "rank",
    "jitter",
    "learning_rate",
    "margin",
    "negatives",
    "batch_size",
    "epochs",
    "query_types",
    "aggregator",
    "optimizer",
    "objective",
    "patience",
    "seed",
    "threads",
];

pub fn resolve(args: &HyperArgs, config_path: Option<&Path>) -> anyhow::Result<Resolved> {
    let mut sources: Vec<(&'static str, Source)> = FIELDS.iter().map(|&f| (f, Source::Default)).collect();
    let mut set = |name: &str, src: Source| {
        if let Some(entry) = sources.iter_mut().find(|(f, _)| *f == name) {
            entry.1 = src;
        }
    };

    let mut config = match config_path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| gaussq_core::Error::Io {
                    path: path.to_path_buf(),
                    source: e,
                })?;
            let table: toml::Table = toml::from_str(&text)
                .with_context(|| format!("{}: invalid config file", path.display()))?;
            for key in table.keys() {
                set(key, Source::File);
            }
            toml::from_str::<TrainConfig>(&text)
                .with_context(|| format!("{}: invalid config file", path.display()))?
        }
        None => TrainConfig::default(),
    };

    macro_rules! flag {
        ($field:ident, $value:expr, $name:literal) => {
            if let Some(v) = $value {
                config.$field = v;
                set($name, Source::Flag);
            }
        };
    }
    flag!(dim, args.dim, "dim");
    flag!(rank, args.rank, "rank");
    flag!(jitter, args.jitter, "jitter");
    flag!(learning_rate, args.lr, "learning_rate");
    flag!(margin, args.margin, "margin");
    flag!(negatives, args.negatives, "negatives");
    flag!(batch_size, args.batch, "batch_size");
    flag!(epochs, args.epochs, "epochs");
    flag!(query_types, args.types.as_deref().map(parse_types).transpose()?, "query_types");
    flag!(
        aggregator,
        args.aggregator.as_deref().map(str::parse).transpose()?,
        "aggregator"
    );
    flag!(
        optimizer,
        args.optimizer.as_deref().map(str::parse).transpose()?,
        "optimizer"
    );
    flag!(
        objective,
        args.objective.as_deref().map(str::parse).transpose()?,
        "objective"
    );
    flag!(patience, args.patience, "patience");
    flag!(seed, args.seed, "seed");
    flag!(threads, args.threads, "threads");
    config.validate()?;
    Ok(Resolved { config, sources })
}

impl Resolved {
    pub fn source(&self, field: &str) -> Source {
        self.sources
            .iter()
            .find(|(f, _)| *f == field)
            .map(|(_, s)| *s)
            .unwrap_or(Source::Default)
    }

    pub fn log(&self) {
        let value = serde_json::to_value(&self.config).unwrap_or_default();
        for (name, src) in &self.sources {
            log::info!(
                "config {name} = {} ({})",
                value.get(*name).map(|v| v.to_string()).unwrap_or_default(),
                match src {
                    Source::Default => "default",
                    Source::File => "file",
                    Source::Flag => "flag",
                }
            );
        }
    }
}
