//! The four subcommands: train, eval, gradcheck, sweep.
//!
//! Every command is deterministic given its configuration; output files
//! carry no timestamps and floats print in shortest round-trip form, so
//! re-running a command reproduces its artifacts byte for byte.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use cmcl_core::checkpoint;
use cmcl_core::data::Dataset;
use cmcl_core::ensemble::{
    cmcl_batch_gradients, cmcl_batch_loss, forward_ensemble, train, Ensemble, EnsembleConfig,
    GradVariant, MaskSet, Mode,
};
use cmcl_core::gradcheck::{grad_check_group, GradCheckConfig};
use cmcl_core::losses;
use cmcl_core::matrix::Matrix;
use cmcl_core::metrics::{self, EvalReport};
use cmcl_core::net::{backward, NetworkParams};
use cmcl_core::Error as CoreError;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::config::RunConfig;

const HISTOGRAM_BINS: usize = 20;

fn write_report_files(report: &EvalReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("report.txt"), report.to_text())?;
    let json = serde_json::to_string_pretty(report).context("serializing report")?;
    fs::write(out.join("report.json"), json + "\n")?;

    // Pooled entropy histogram over all members; counts sum to N * M.
    let entropies: Vec<f64> = report.member_entropies.iter().flatten().copied().collect();
    let range = (0.0, (report.class_count as f64).ln());
    let counts = metrics::entropy_histogram(&entropies, HISTOGRAM_BINS, range)?;
    fs::write(
        out.join("entropy_hist.tsv"),
        metrics::histogram_to_delimited(&counts, range),
    )?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let (train_set, eval_set) = cfg.build_splits()?;
    let (ensemble, log) = train(&cfg.ensemble, &train_set, Some(&eval_set))?;

    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("training_log.csv"), log.to_delimited())
        .with_context(|| format!("writing training log under {}", cfg.out.display()))?;
    checkpoint::save(&ensemble, &cfg.out.join("checkpoint.json"))?;

    let report = metrics::evaluate(&ensemble, &eval_set)?;
    write_report_files(&report, &cfg.out)?;

    println!(
        "trained mode={} members={} epochs={} on {} ({} train / {} eval examples)",
        ensemble.config.mode,
        ensemble.config.members,
        ensemble.config.epochs,
        train_set.name,
        train_set.len(),
        eval_set.len()
    );
    println!(
        "final top1_error={} oracle_error={}",
        report.top1_error, report.oracle_error
    );
    println!("outputs written to {}", cfg.out.display());
    Ok(())
}

pub fn cmd_eval(checkpoint_path: &Path, cfg: &RunConfig) -> Result<()> {
    let ensemble = checkpoint::load(checkpoint_path)?;
    let dataset = cfg.dataset.build(cfg.ensemble.seed)?;
    let report = metrics::evaluate(&ensemble, &dataset)?;
    print!("{}", report.to_text());
    write_report_files(&report, &cfg.out)?;
    println!("outputs written to {}", cfg.out.display());
    Ok(())
}

struct GradCase {
    name: &'static str,
    max_rel_error: f64,
    passed: bool,
}

/// Fixture for the gradient suite: a small two-member ensemble on a random
/// batch, checked against central finite differences.
pub fn cmd_gradcheck(cfg: &RunConfig, tolerance: f64, corrupt: bool) -> Result<()> {
    let seed = cfg.ensemble.seed;
    let beta = cfg.ensemble.beta;
    let fixture = EnsembleConfig {
        members: 2,
        overlap: 1,
        beta,
        lambda: 0.7,
        share_layer: Some(1),
        grad_variant: GradVariant::ExactV0,
        mode: Mode::Cmcl,
        hidden_dims: vec![8],
        seed,
        ..EnsembleConfig::default()
    };
    let input_dim = 3;
    let class_count = 4;
    let batch = 6;
    let ensemble = Ensemble::init(&fixture, input_dim, class_count)?;
    let mut rng = StdRng::seed_from_u64(seed.wrapping_add(1));
    let inputs = Matrix::from_vec(
        batch,
        input_dim,
        (0..batch * input_dim).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    )?;
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..class_count)).collect();
    let check = GradCheckConfig {
        epsilon: 1e-5,
        tolerance,
    };
    let single = &ensemble.members[..1];
    let inv_b = 1.0 / batch as f64;
    let mut cases: Vec<GradCase> = Vec::new();

    // Case 1: mean cross-entropy of one member.
    {
        let trace = cmcl_core::net::forward(&single[0], &inputs, &[])?;
        let probs = trace.output();
        let mut logit_grad = Matrix::zeros(batch, class_count);
        for i in 0..batch {
            let lg = losses::cross_entropy(probs.row(i), labels[i])?.logit_grad;
            for (j, v) in lg.iter().enumerate() {
                logit_grad.set(i, j, v * inv_b);
            }
        }
        let mut analytic = vec![backward(&single[0], &trace, &logit_grad)?];
        if corrupt {
            analytic[0].layers[0].weight.data_mut()[0] += 0.5;
        }
        let labels = labels.clone();
        let inputs = inputs.clone();
        let loss = move |group: &[NetworkParams]| -> cmcl_core::Result<f64> {
            let t = cmcl_core::net::forward(&group[0], &inputs, &[])?;
            let mut total = 0.0;
            for i in 0..batch {
                total += losses::cross_entropy_value(t.output().row(i), labels[i])?;
            }
            Ok(total * inv_b)
        };
        let report = grad_check_group(single, loss, &analytic, check)?;
        cases.push(GradCase {
            name: "cross_entropy",
            max_rel_error: report.max_rel_error,
            passed: report.passed,
        });
    }

    // Case 2: mean KL-to-uniform of one member (exact v0 gradient).
    {
        let inputs = Matrix::from_vec(
            batch,
            input_dim,
            (0..batch * input_dim).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        )?;
        let trace = cmcl_core::net::forward(&single[0], &inputs, &[])?;
        let probs = trace.output();
        let mut logit_grad = Matrix::zeros(batch, class_count);
        for i in 0..batch {
            let g = losses::kl_from_uniform_grad_exact(probs.row(i));
            for (j, v) in g.iter().enumerate() {
                logit_grad.set(i, j, v * inv_b);
            }
        }
        let analytic = vec![backward(&single[0], &trace, &logit_grad)?];
        let loss = move |group: &[NetworkParams]| -> cmcl_core::Result<f64> {
            let t = cmcl_core::net::forward(&group[0], &inputs, &[])?;
            let mut total = 0.0;
            for i in 0..batch {
                total += losses::kl_from_uniform(t.output().row(i));
            }
            Ok(total * inv_b)
        };
        let report = grad_check_group(single, loss, &analytic, check)?;
        cases.push(GradCase {
            name: "kl_to_uniform_exact",
            max_rel_error: report.max_rel_error,
            passed: report.passed,
        });
    }

    // Cases 3 and 4: the composite objective at a fixed assignment, without
    // and with feature sharing (the latter exercises peer gradients).
    for (name, masks) in [
        ("cmcl_composite_v0", None),
        (
            "feature_sharing_peer",
            Some(MaskSet::sample(
                fixture.members,
                fixture.hidden_dims[0],
                1,
                fixture.lambda,
                &mut rng,
            )),
        ),
    ] {
        let traces = match &masks {
            Some(m) => forward_ensemble(&ensemble, &inputs, Some(m), false)?,
            None => ensemble
                .members
                .iter()
                .map(|p| cmcl_core::net::forward(p, &inputs, &[]))
                .collect::<cmcl_core::Result<Vec<_>>>()?,
        };
        let mut task = Matrix::zeros(batch, fixture.members);
        let mut kl = Matrix::zeros(batch, fixture.members);
        for (m, trace) in traces.iter().enumerate() {
            for i in 0..batch {
                task.set(i, m, losses::cross_entropy_value(trace.output().row(i), labels[i])?);
                kl.set(i, m, losses::kl_from_uniform(trace.output().row(i)));
            }
        }
        let (_, assignment) = losses::confident_oracle_loss(&task, &kl, beta, fixture.overlap)?;
        let mut unused = StdRng::seed_from_u64(0);
        let analytic = cmcl_batch_gradients(
            &ensemble.members,
            &traces,
            &labels,
            &assignment,
            beta,
            GradVariant::ExactV0,
            1,
            masks.as_ref(),
            &mut unused,
        )?;
        let labels = labels.clone();
        let inputs = inputs.clone();
        let assignment_for_loss = assignment.clone();
        let masks_for_loss = masks.clone();
        let loss = move |group: &[NetworkParams]| -> cmcl_core::Result<f64> {
            cmcl_batch_loss(
                group,
                &inputs,
                &labels,
                &assignment_for_loss,
                beta,
                masks_for_loss.as_ref(),
            )
        };
        let report = grad_check_group(&ensemble.members, loss, &analytic, check)?;
        cases.push(GradCase {
            name,
            max_rel_error: report.max_rel_error,
            passed: report.passed,
        });
    }

    let mut all_passed = true;
    for case in &cases {
        println!(
            "case {}: max_rel_error {:.3e} [{}]",
            case.name,
            case.max_rel_error,
            if case.passed { "PASS" } else { "FAIL" }
        );
        all_passed &= case.passed;
    }
    if !all_passed {
        bail!("gradient check failed (tolerance {tolerance})");
    }
    Ok(())
}

pub fn default_beta_grid() -> Vec<f64> {
    vec![0.5, 0.75, 1.0, 1.25, 1.5]
}

pub fn default_k_grid() -> Vec<usize> {
    vec![2, 3, 4]
}

/// One full training run per (beta, K) grid point on a shared dataset and
/// split; per-point failures are recorded and the sweep continues.
pub fn cmd_sweep(cfg: &RunConfig, beta_grid: &[f64], k_grid: &[usize]) -> Result<()> {
    if beta_grid.is_empty() || k_grid.is_empty() {
        bail!("sweep grids must be non-empty");
    }
    cfg.validate()?;
    let (train_set, eval_set) = cfg.build_splits()?;

    let mut table = String::from("beta,k,oracle_error,top1_error,status\n");
    println!("beta\tk\toracle_error\ttop1_error\tstatus");
    for &beta in beta_grid {
        for &k in k_grid {
            let point = EnsembleConfig {
                beta,
                overlap: k,
                ..cfg.ensemble.clone()
            };
            match sweep_point(&point, &train_set, &eval_set) {
                Ok(report) => {
                    println!(
                        "{beta}\t{k}\t{}\t{}\tok",
                        report.oracle_error, report.top1_error
                    );
                    table.push_str(&format!(
                        "{beta},{k},{},{},ok\n",
                        report.oracle_error, report.top1_error
                    ));
                }
                Err(err) => {
                    let message = err.to_string().replace([',', '\n'], ";");
                    println!("{beta}\t{k}\t\t\t{message}");
                    table.push_str(&format!("{beta},{k},,,{message}\n"));
                }
            }
        }
    }
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("sweep.csv"), table)?;
    println!("sweep table written to {}", cfg.out.join("sweep.csv").display());
    Ok(())
}

fn sweep_point(config: &EnsembleConfig, train_set: &Dataset, eval_set: &Dataset) -> Result<EvalReport> {
    config.validate().map_err(|e: CoreError| anyhow!(e))?;
    let (ensemble, _log) = train(config, train_set, Some(eval_set))?;
    Ok(metrics::evaluate(&ensemble, eval_set)?)
}
