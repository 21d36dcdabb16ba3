//! Building an exit policy from `--exits`, `--method`, `--theta` and
//! `--same-theta` on top of a starting policy.

use anyhow::Result;
use clap::Args;

use eeloc::exitnet::{ExitPolicy, ExitRule, MultiExitModel, UncertaintyMethod};
use eeloc::Error;

#[derive(Args, Clone, Debug, Default)]
pub struct PolicyArgs {
    /// Exit switches: `off`, `all`, or one 0/1 per exit (e.g. `01`).
    #[arg(long)]
    pub exits: Option<String>,
    /// Uncertainty method for enabled exits.
    #[arg(long)]
    pub method: Option<UncertaintyMethod>,
    /// Threshold for one exit, `<exit>=<value>`; exit is a 1-based index or a branch name. Repeatable.
    #[arg(long = "theta", value_name = "EXIT=VALUE")]
    pub thetas: Vec<String>,
    /// Same threshold for every enabled exit.
    #[arg(long)]
    pub same_theta: Option<f64>,
}

impl PolicyArgs {
    pub fn is_empty(&self) -> bool {
        self.exits.is_none()
            && self.method.is_none()
            && self.thetas.is_empty()
            && self.same_theta.is_none()
    }
}

fn invalid(msg: String) -> anyhow::Error {
    Error::InvalidArgument(msg).into()
}

pub fn parse_mask(mask: &str, n: usize) -> Result<Vec<bool>> {
    match mask {
        "off" | "none" => Ok(vec![false; n]),
        "all" | "on" => Ok(vec![true; n]),
        m if m.len() == n && m.chars().all(|c| c == '0' || c == '1') => {
            Ok(m.chars().map(|c| c == '1').collect())
        }
        m => Err(invalid(format!(
            "exit mask '{m}' must be off, all, or {n} digits of 0/1"
        ))),
    }
}

fn exit_index(model: &MultiExitModel, key: &str) -> Result<usize> {
    if let Ok(i) = key.parse::<usize>() {
        if (1..=model.num_exits()).contains(&i) {
            return Ok(i - 1);
        }
    }
    model
        .spec
        .exits
        .iter()
        .position(|e| e.name == key)
        .ok_or_else(|| invalid(format!("unknown exit '{key}'")))
}

/// Applies the flags to `start`. Enabled exits must end up with a method
/// and a threshold.
pub fn build_policy(
    model: &MultiExitModel,
    start: &ExitPolicy,
    args: &PolicyArgs,
) -> Result<ExitPolicy> {
    let n = model.num_exits();
    let mut thetas: Vec<Option<f64>> = start.exits.iter().map(|e| e.map(|r| r.threshold)).collect();
    let mut methods: Vec<Option<UncertaintyMethod>> =
        start.exits.iter().map(|e| e.map(|r| r.method)).collect();
    let mut enabled: Vec<bool> = start.exits.iter().map(Option::is_some).collect();
    if let Some(mask) = &args.exits {
        enabled = parse_mask(mask, n)?;
    }
    if let Some(t) = args.same_theta {
        thetas = vec![Some(t); n];
    }
    for spec in &args.thetas {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| invalid(format!("--theta '{spec}' must be EXIT=VALUE")))?;
        let i = exit_index(model, k.trim())?;
        let t: f64 = v
            .trim()
            .parse()
            .map_err(|_| invalid(format!("bad threshold in '{spec}'")))?;
        thetas[i] = Some(t);
        if args.exits.is_none() {
            enabled[i] = true;
        }
    }
    if let Some(m) = args.method {
        methods = vec![Some(m); n];
    }
    let exits = (0..n)
        .map(|i| {
            if !enabled[i] {
                return Ok(None);
            }
            let method = methods[i].unwrap_or(UncertaintyMethod::Margin);
            match thetas[i] {
                Some(threshold) => Ok(Some(ExitRule { method, threshold })),
                None => Err(invalid(format!(
                    "exit {} is enabled but has no threshold (use --theta or --same-theta)",
                    i + 1
                ))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let policy = ExitPolicy { exits };
    policy.validate(n)?;
    Ok(policy)
}
