//! One runner per subcommand. Every runner is deterministic given the
//! config (including the master seed): identical configs produce
//! byte-identical artifacts.

use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Result};
use blockcs_core::certificates::{
    golfing_certificate, golfing_schedule, identifiability_rank_test, pathological_signal,
    reduced_line_matrix, CertificateReport, IdentifiabilityMode,
};
use blockcs_core::coherence::{self, gamma, gamma_gaussian, optimal_pi, SupportSet};
use blockcs_core::montecarlo::{
    gaussian_gamma_scaling, phase_transition, tail_check_grid, SignalClass, TailEvent,
};
use blockcs_core::operators::LinearOperator;
use blockcs_core::sampling::{draw_blocks, from_indices};
use blockcs_core::seeding;
use blockcs_core::solver::{basis_pursuit, check_recovery, psnr, SparseSignal};
use num_complex::Complex64;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{fmt_f64, write_json, write_pgm_mask, Artifacts, CsvFile, Provenance};

pub fn run(config: &ExperimentConfig, output_dir: &Path) -> Result<Artifacts> {
    let provenance = Provenance::new(&config.scenario, &config.sha256(), config.seed);
    let mut artifacts = Artifacts::new(output_dir)?;
    match config.scenario.as_str() {
        "coherence" => run_coherence(config, &provenance, &mut artifacts)?,
        "optimal-pi" => run_optimal_pi(config, &provenance, &mut artifacts)?,
        "sample" => run_sample(config, &provenance, &mut artifacts)?,
        "recover" => run_recover(config, &provenance, &mut artifacts)?,
        "phase" => run_phase(config, &provenance, &mut artifacts)?,
        "certify" => run_certify(config, &provenance, &mut artifacts)?,
        "identify" => run_identify(config, &provenance, &mut artifacts)?,
        "tailcheck" => run_tailcheck(config, &provenance, &mut artifacts)?,
        "gaussian-scaling" => run_gaussian_scaling(config, &provenance, &mut artifacts)?,
        other => bail!("scenario: unknown scenario '{other}'"),
    }
    Ok(artifacts)
}

/// Support from an explicit index list or drawn uniformly at random from the
/// master seed.
fn resolve_support(
    n: usize,
    explicit: Option<&Vec<usize>>,
    s: Option<usize>,
    seed: u64,
    field: &str,
) -> Result<SupportSet> {
    match (explicit, s) {
        (Some(indices), _) => Ok(SupportSet::new(n, indices.clone())?),
        (None, Some(s)) => {
            let mut rng = seeding::rng_from(seed, &[0x5u64]);
            Ok(SupportSet::random(n, s, &mut rng)?)
        }
        (None, None) => bail!("{field}: either explicit support indices or s is required"),
    }
}

fn run_coherence(
    config: &ExperimentConfig,
    provenance: &Provenance,
    artifacts: &mut Artifacts,
) -> Result<()> {
    let section = config
        .coherence
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("coherence: section required for this scenario"))?;
    let dict = config.build_dictionary()?;
    let support = resolve_support(
        dict.n(),
        section.support.as_ref(),
        section.s,
        config.seed,
        "coherence.support",
    )?;

    #[derive(Serialize)]
    struct CoherenceArtifact {
        support: Vec<usize>,
        coherence: coherence::CoherenceReport,
        /// `||B_k* B_k||_{1->inf}` per block, before any `pi` rescale
        /// (absent for Gaussian generators).
        per_block_gram_sup_norm: Option<Vec<f64>>,
        distribution: Option<Vec<f64>>,
    }

    let artifact = if dict.is_gaussian() {
        let report = gamma_gaussian(
            &dict,
            &support,
            section.trials,
            section.quantile,
            config.seed,
        )?;
        CoherenceArtifact {
            support: support.indices().to_vec(),
            coherence: report,
            per_block_gram_sup_norm: None,
            distribution: None,
        }
    } else {
        let pi = config.build_distribution(&dict)?;
        let report = gamma(&dict, &pi, &support)?;
        let per_block: Vec<f64> = (0..dict.num_blocks())
            .map(|k| coherence::block_gram_sup_norm(&dict, k))
            .collect();
        CoherenceArtifact {
            support: support.indices().to_vec(),
            coherence: report,
            per_block_gram_sup_norm: Some(per_block),
            distribution: Some(pi.probabilities().to_vec()),
        }
    };
    write_json(&artifacts.path("coherence.json"), provenance, &artifact)?;

    let mut csv = CsvFile::new(provenance, &["mu1", "mu2", "mu3", "mu4", "gamma", "s"]);
    let c = &artifact.coherence;
    csv.push_row(&[
        fmt_f64(c.mu1),
        fmt_f64(c.mu2),
        fmt_f64(c.mu3),
        c.mu4.map(fmt_f64).unwrap_or_default(),
        fmt_f64(c.gamma),
        c.s.to_string(),
    ]);
    csv.write(&artifacts.path("coherence.csv"))?;
    Ok(())
}

fn run_optimal_pi(
    config: &ExperimentConfig,
    provenance: &Provenance,
    artifacts: &mut Artifacts,
) -> Result<()> {
    let dict = config.build_dictionary()?;
    let pi = optimal_pi(&dict)?;

    #[derive(Serialize)]
    struct OptimalPiArtifact {
        num_blocks: usize,
        probabilities: Vec<f64>,
    }
    write_json(
        &artifacts.path("optimal_pi.json"),
        provenance,
        &OptimalPiArtifact {
            num_blocks: dict.num_blocks(),
            probabilities: pi.probabilities().to_vec(),
        },
    )?;

    let mut csv = CsvFile::new(provenance, &["block", "pi_star"]);
    for (k, &p) in pi.probabilities().iter().enumerate() {
        csv.push_row(&[k.to_string(), fmt_f64(p)]);
    }
    csv.write(&artifacts.path("optimal_pi.csv"))?;
    Ok(())
}

fn run_sample(
    config: &ExperimentConfig,
    provenance: &Provenance,
    artifacts: &mut Artifacts,
) -> Result<()> {
    let section = config
        .sample
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("sample: section required for this scenario"))?;
    let dict = config.build_dictionary()?;
    let pi = config.build_distribution(&dict)?;
    let a = draw_blocks(&dict, &pi, section.m, config.seed)?;

    #[derive(Serialize)]
    struct SampleArtifact {
        m: usize,
        total_rows: usize,
        drawn_indices: Option<Vec<usize>>,
        distribution: Vec<f64>,
    }
    write_json(
        &artifacts.path("sample.json"),
        provenance,
        &SampleArtifact {
            m: section.m,
            total_rows: a.total_rows(),
            drawn_indices: a.drawn_indices().map(|k| k.to_vec()),
            distribution: pi.probabilities().to_vec(),
        },
    )?;

    if let Some(k) = a.drawn_indices() {
        let mut csv = CsvFile::new(provenance, &["draw", "block"]);
        for (j, &idx) in k.iter().enumerate() {
            csv.push_row(&[j.to_string(), idx.to_string()]);
        }
        csv.write(&artifacts.path("sample.csv"))?;
    }

    // k-space mask for grid dictionaries.
    let sqrt_n = (dict.n() as f64).sqrt().round() as usize;
    if sqrt_n * sqrt_n == dict.n() {
        if let Ok(mask) = a.sampled_base_rows() {
            write_pgm_mask(&artifacts.path("mask.pgm"), provenance, &mask, sqrt_n)?;
        }
    }
    Ok(())
}

/// A synthetic piecewise-constant image: a few axis-aligned constant
/// rectangles on a zero background, sparse in the pixel basis.
fn synthesize_rect_image(sqrt_n: usize, rectangles: usize, max_side: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = seeding::rng(seed);
    let mut img = vec![0.0f64; sqrt_n * sqrt_n];
    for _ in 0..rectangles {
        let h = rng.gen_range(1..=max_side.min(sqrt_n));
        let w = rng.gen_range(1..=max_side.min(sqrt_n));
        let r0 = rng.gen_range(0..=sqrt_n - h);
        let c0 = rng.gen_range(0..=sqrt_n - w);
        let value = rng.gen_range(0.5..1.5);
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                img[r * sqrt_n + c] = value;
            }
        }
    }
    img
}

fn run_recover(
    config: &ExperimentConfig,
    provenance: &Provenance,
    artifacts: &mut Artifacts,
) -> Result<()> {
    let section = config
        .recover
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("recover: section required for this scenario"))?;
    let dict = config.build_dictionary()?;
    let pi = config.build_distribution(&dict)?;
    let opts = config.solver.to_options();
    let n = dict.n();
    let sqrt_n = (n as f64).sqrt().round() as usize;

    let mut csv = CsvFile::new(
        provenance,
        &[
            "trial",
            "s",
            "converged",
            "iterations",
            "primal_residual",
            "objective",
            "relative_error",
            "success",
            "psnr_db",
        ],
    );

    #[derive(Serialize, Default)]
    struct RecoverSummary {
        trials: usize,
        successes: usize,
        nonconverged: usize,
        mean_relative_error: f64,
        psnr_db: Vec<f64>,
    }
    let mut summary = RecoverSummary {
        trials: section.trials,
        ..Default::default()
    };
    let mut rel_sum = 0.0f64;

    for t in 0..section.trials as u64 {
        let trial_seed = seeding::derive_seed(config.seed, &[t]);
        let (x, reference_image): (SparseSignal, Option<Vec<f64>>) =
            if let Some(image) = &section.image {
                if sqrt_n * sqrt_n != n {
                    bail!("recover.image: requires a dictionary over a square grid");
                }
                let img = synthesize_rect_image(
                    sqrt_n,
                    image.rectangles,
                    image.max_side,
                    seeding::derive_seed(trial_seed, &[0]),
                );
                let indices: Vec<usize> = img
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(i, _)| i)
                    .collect();
                if indices.is_empty() {
                    bail!("recover.image: synthesized an empty image");
                }
                let values: Vec<Complex64> = indices
                    .iter()
                    .map(|&i| Complex64::new(img[i], 0.0))
                    .collect();
                let support = SupportSet::new(n, indices)?;
                (SparseSignal::new(support, values)?, Some(img))
            } else {
                let signal = config
                    .signal
                    .as_ref()
                    .ok_or_else(|| anyhow::anyhow!("signal: section required for recover"))?;
                let s = signal
                    .s
                    .ok_or_else(|| anyhow::anyhow!("signal.s: required for recover"))?;
                let x = match signal.class.as_str() {
                    "generic" => {
                        let mut rng = seeding::rng_from(trial_seed, &[0]);
                        SparseSignal::random_unit_modulus(n, s, &mut rng)?
                    }
                    "pathological" => {
                        if sqrt_n * sqrt_n != n {
                            bail!("signal.class: pathological signals need a square grid");
                        }
                        pathological_signal(sqrt_n, s, seeding::derive_seed(trial_seed, &[0]))?
                    }
                    other => bail!("signal.class: unknown class '{other}'"),
                };
                (x, None)
            };

        let a = draw_blocks(
            &dict,
            &pi,
            section.m,
            seeding::derive_seed(trial_seed, &[1]),
        )?;
        let y = a.apply(&x.dense());
        let mut result = basis_pursuit(&a, &y, &opts)?;
        let (success, rel) = check_recovery(&x, &mut result, opts.success_tol);
        if success {
            summary.successes += 1;
        }
        if !result.converged {
            summary.nonconverged += 1;
        }
        rel_sum += rel;

        let psnr_field = if let Some(reference) = &reference_image {
            let estimate: Vec<f64> = result.estimate.iter().map(|v| v.re).collect();
            let peak = reference.iter().cloned().fold(0.0f64, f64::max);
            let value = psnr(reference, &estimate, peak);
            summary.psnr_db.push(value);
            fmt_f64(value)
        } else {
            String::new()
        };

        csv.push_row(&[
            t.to_string(),
            x.support().len().to_string(),
            result.converged.to_string(),
            result.iterations.to_string(),
            fmt_f64(result.primal_residual),
            fmt_f64(result.objective),
            fmt_f64(rel),
            success.to_string(),
            psnr_field,
        ]);
    }
    summary.mean_relative_error = rel_sum / section.trials as f64;
    csv.write(&artifacts.path("recover.csv"))?;
    write_json(&artifacts.path("recover.json"), provenance, &summary)?;
    Ok(())
}

fn run_phase(
    config: &ExperimentConfig,
    provenance: &Provenance,
    artifacts: &mut Artifacts,
) -> Result<()> {
    let grid = config
        .grid
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("grid: section required for this scenario"))?;
    let signal = config
        .signal
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("signal: section required for this scenario"))?;
    let s_values: Vec<usize> = match (&signal.s_grid, signal.s) {
        (Some(grid), _) => grid.clone(),
        (None, Some(s)) => vec![s],
        (None, None) => bail!("signal.s: required (or signal.s_grid)"),
    };
    let class = match signal.class.as_str() {
        "generic" => SignalClass::Generic,
        "pathological" => SignalClass::Pathological,
        other => bail!("signal.class: unknown class '{other}'"),
    };
    let dict = config.build_dictionary()?;
    let pi = config.build_distribution(&dict)?;
    let opts = config.solver.to_options();
    let diagram = phase_transition(
        &dict,
        &pi,
        &s_values,
        &grid.m,
        grid.trials,
        config.seed,
        class,
        &opts,
    )?;

    let mut csv = CsvFile::new(
        provenance,
        &[
            "s",
            "m",
            "trials",
            "successes",
            "nonconverged",
            "success_rate",
        ],
    );
    for cell in &diagram.cells {
        csv.push_row(&[
            cell.s.to_string(),
            cell.m.to_string(),
            cell.trials.to_string(),
            cell.successes.to_string(),
            cell.nonconverged.to_string(),
            fmt_f64(cell.success_rate()),
        ]);
    }
    csv.write(&artifacts.path("phase.csv"))?;
    write_json(&artifacts.path("phase.json"), provenance, &diagram)?;
    Ok(())
}

fn run_certify(
    config: &ExperimentConfig,
    provenance: &Provenance,
    artifacts: &mut Artifacts,
) -> Result<()> {
    let section = config
        .certify
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("certify: section required for this scenario"))?;
    let signal = config
        .signal
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("signal: section required for this scenario"))?;
    let s = signal
        .s
        .ok_or_else(|| anyhow::anyhow!("signal.s: required for certify"))?;
    let dict = config.build_dictionary()?;
    let pi = config.build_distribution(&dict)?;
    let opts = config.solver.to_options();
    let n = dict.n();
    let schedule = golfing_schedule(s, n, section.m, section.eps)?;

    #[derive(Serialize)]
    struct CertifyTrial {
        trial: u64,
        report: CertificateReport,
        recovered: bool,
        relative_error: f64,
    }
    #[derive(Serialize)]
    struct CertifySummary {
        schedule: blockcs_core::certificates::GolfingSchedule,
        all_pass_count: usize,
        implication_violations: usize,
        trials: Vec<CertifyTrial>,
    }

    let mut csv = CsvFile::new(
        provenance,
        &[
            "trial",
            "inv_norm",
            "max_col",
            "v_support_error",
            "v_off_support_inf",
            "all_pass",
            "recovered",
            "relative_error",
        ],
    );
    let mut trials = Vec::new();
    let mut all_pass_count = 0usize;
    let mut implication_violations = 0usize;
    for t in 0..section.trials as u64 {
        let trial_seed = seeding::derive_seed(config.seed, &[t]);
        let mut rng = seeding::rng_from(trial_seed, &[0]);
        let x = SparseSignal::random_unit_modulus(n, s, &mut rng)?;
        let a = draw_blocks(
            &dict,
            &pi,
            section.m,
            seeding::derive_seed(trial_seed, &[1]),
        )?;
        let groups = a.partition_for_golfing(&schedule.group_sizes)?;
        let report = golfing_certificate(&groups, x.support(), &x.sign_on_support(), &schedule)?;
        let y = a.apply(&x.dense());
        let mut result = basis_pursuit(&a, &y, &opts)?;
        let (recovered, rel) = check_recovery(&x, &mut result, opts.success_tol);
        if report.flags.all_pass() {
            all_pass_count += 1;
            if !recovered {
                implication_violations += 1;
            }
        }
        csv.push_row(&[
            t.to_string(),
            fmt_f64(report.inv_norm),
            fmt_f64(report.max_col),
            fmt_f64(report.v_support_error),
            fmt_f64(report.v_off_support_inf),
            report.flags.all_pass().to_string(),
            recovered.to_string(),
            fmt_f64(rel),
        ]);
        trials.push(CertifyTrial {
            trial: t,
            report,
            recovered,
            relative_error: rel,
        });
    }
    csv.write(&artifacts.path("certify.csv"))?;
    write_json(
        &artifacts.path("certify.json"),
        provenance,
        &CertifySummary {
            schedule,
            all_pass_count,
            implication_violations,
            trials,
        },
    )?;
    Ok(())
}

fn run_identify(
    config: &ExperimentConfig,
    provenance: &Provenance,
    artifacts: &mut Artifacts,
) -> Result<()> {
    let section = config
        .identify
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("identify: section required for this scenario"))?;
    let dict = config.build_dictionary()?;
    let pi = config.build_distribution(&dict)?;
    if section.m == 0 || section.m > dict.num_blocks() {
        bail!(
            "identify.m: must select between 1 and {} distinct blocks",
            dict.num_blocks()
        );
    }
    // Distinct blocks drawn without replacement from the master seed.
    let mut rng = seeding::rng_from(config.seed, &[0x1d]);
    let mut drawn = rand::seq::index::sample(&mut rng, dict.num_blocks(), section.m).into_vec();
    drawn.sort_unstable();

    let mode = match section.mode.as_str() {
        "exhaustive" => IdentifiabilityMode::Exhaustive,
        "randomized" => IdentifiabilityMode::Randomized {
            trials: section
                .trials
                .ok_or_else(|| anyhow::anyhow!("identify.trials: required for randomized mode"))?,
        },
        other => bail!("identify.mode: unknown mode '{other}'"),
    };

    let report = match section.class.as_str() {
        "ambient" => {
            let a = from_indices(&dict, &pi, &drawn, section.m)?;
            identifiability_rank_test(&a, section.s, mode, config.seed)?
        }
        "line-class" => {
            if config.dictionary.kind != "line-blocks" {
                bail!("identify.class: line-class requires dictionary.kind = \"line-blocks\"");
            }
            let sqrt_n = config
                .dictionary
                .dim
                .ok_or_else(|| anyhow::anyhow!("dictionary.dim: required"))?;
            let psi = match config.dictionary.transform.as_deref().unwrap_or("dft") {
                "dft" => blockcs_core::operators::dft_operator(sqrt_n),
                "identity" => blockcs_core::operators::identity_operator(sqrt_n),
                other => bail!("dictionary.transform: unknown transform '{other}'"),
            };
            let reduced = reduced_line_matrix(&*psi, &drawn, &pi, section.m)?;
            identifiability_rank_test(&reduced, section.s, mode, config.seed)?
        }
        other => bail!("identify.class: unknown class '{other}'"),
    };

    #[derive(Serialize)]
    struct IdentifyArtifact {
        s: usize,
        class: String,
        drawn_blocks: Vec<usize>,
        report: blockcs_core::certificates::IdentifiabilityReport,
    }
    write_json(
        &artifacts.path("identify.json"),
        provenance,
        &IdentifyArtifact {
            s: section.s,
            class: section.class.clone(),
            drawn_blocks: drawn,
            report,
        },
    )?;
    Ok(())
}

fn run_tailcheck(
    config: &ExperimentConfig,
    provenance: &Provenance,
    artifacts: &mut Artifacts,
) -> Result<()> {
    let section = config
        .tailcheck
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("tailcheck: section required for this scenario"))?;
    if section.m.is_empty() {
        bail!("tailcheck.m: must be non-empty");
    }
    if section.thresholds.is_empty() {
        bail!("tailcheck.thresholds: must be non-empty");
    }
    let event =
        TailEvent::from_str(&section.event).map_err(|e| anyhow::anyhow!("tailcheck.event: {e}"))?;
    let dict = config.build_dictionary()?;
    let pi = config.build_distribution(&dict)?;
    let support = resolve_support(
        dict.n(),
        section.support.as_ref(),
        section.s,
        config.seed,
        "tailcheck.support",
    )?;

    let mut reports = Vec::new();
    for (mi, &m) in section.m.iter().enumerate() {
        let grid = tail_check_grid(
            event,
            &dict,
            &pi,
            &support,
            m,
            &section.thresholds,
            section.trials,
            seeding::derive_seed(config.seed, &[mi as u64]),
        )?;
        reports.extend(grid);
    }

    let mut csv = CsvFile::new(
        provenance,
        &[
            "event",
            "m",
            "threshold",
            "trials",
            "hits",
            "frequency",
            "wilson_low",
            "wilson_high",
            "bound",
            "pass",
        ],
    );
    for r in &reports {
        csv.push_row(&[
            format!("{:?}", r.event),
            r.m.to_string(),
            fmt_f64(r.threshold),
            r.trials.to_string(),
            r.hits.to_string(),
            fmt_f64(r.frequency),
            fmt_f64(r.wilson_low),
            fmt_f64(r.wilson_high),
            fmt_f64(r.bound),
            r.pass.to_string(),
        ]);
    }
    csv.write(&artifacts.path("tailcheck.csv"))?;
    write_json(&artifacts.path("tailcheck.json"), provenance, &reports)?;
    Ok(())
}

fn run_gaussian_scaling(
    config: &ExperimentConfig,
    provenance: &Provenance,
    artifacts: &mut Artifacts,
) -> Result<()> {
    let section = config
        .gaussian_scaling
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("gaussian_scaling: section required for this scenario"))?;
    let table = gaussian_gamma_scaling(
        &section.s_values,
        &section.p_values,
        section.n,
        section.trials,
        config.seed,
    )?;

    let mut csv = CsvFile::new(
        provenance,
        &[
            "s",
            "p",
            "mu1_q99",
            "mu2_q99",
            "mu3",
            "gamma",
            "model_value",
        ],
    );
    for row in &table.rows {
        csv.push_row(&[
            row.s.to_string(),
            row.p.to_string(),
            fmt_f64(row.mu1_quantile),
            fmt_f64(row.mu2_quantile),
            fmt_f64(row.mu3),
            fmt_f64(row.gamma),
            fmt_f64(row.model_value),
        ]);
    }
    csv.write(&artifacts.path("gaussian_scaling.csv"))?;
    write_json(&artifacts.path("gaussian_scaling.json"), provenance, &table)?;
    Ok(())
}
