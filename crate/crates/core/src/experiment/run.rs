use std::path::Path;

use rand_distr::{Binomial, Distribution};

use crate::counts::{
    count_pmf, detection_errors, error_vs_duration, error_vs_efficiency, optimal_threshold,
};
use crate::discriminate::{
    simulate_and_classify, wilson_interval, DiscriminationReport, Discriminator, ErrorTally,
};
use crate::error::{Error, Result};
use crate::inference::{
    fit_flip_curve, fit_ramsey_fringe, BinomialPoint, CurveModel, FitResult, FlipCurveModel,
    RamseyModel,
};
use crate::midcircuit::{phase_grid, predicted_contrast, simulate_ramsey, Sequence};
use crate::physics::{
    collected_photon_rate, flip_probability, repump_leak_rate, shelving_leak_probability,
    suppression_factor, two_step_transfer_error, RateConstants, Scheme, COLLECTION_EFFICIENCY,
};
use crate::rng::{domain_seed, substream};
use crate::trajectory::{CountHistogram, QubitState};

use super::config::{ExperimentConfig, FitKind, FitSource};
use super::output::{Cell, ResultBundle, ResultTable};
use super::Analysis;

/// Execute the configured analyses.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    let mut b = ResultBundle {
        files: cfg.outputs.clone(),
        ..Default::default()
    };
    b.set("config.scheme", cfg.scheme.name());
    b.set("config.seed", cfg.seed);
    b.set("config.shots", cfg.shots);
    let names: Vec<&str> = cfg.analyses.iter().map(|a| a.name()).collect();
    b.set("config.analyses", names.join(",").as_str());
    for &analysis in &cfg.analyses {
        let stage = match analysis {
            Analysis::Simulate => simulate(cfg, &mut b),
            Analysis::Analyze => analyze(cfg, &mut b),
            Analysis::Sweep => sweep(cfg, &mut b),
            Analysis::Fit => fit(cfg, &mut b),
            Analysis::Midcircuit => midcircuit(cfg, &mut b),
            Analysis::Budget => budget(cfg, &mut b),
        };
        stage.map_err(|e| e.in_stage(analysis.name()))?;
    }
    Ok(b)
}

fn histogram_table(h: &CountHistogram) -> ResultTable {
    let mut t = ResultTable::new(&["n", "count"]);
    for (&n, &count) in &h.bins {
        t.push(vec![n.into(), count.into()]);
    }
    t
}

fn report_scalars(b: &mut ResultBundle, prefix: &str, r: &DiscriminationReport) {
    let (lo, hi) = r.eps_avg_interval();
    for (key, value) in [
        ("eps0", r.eps0),
        ("eps0_ci_low", r.ci0.0),
        ("eps0_ci_high", r.ci0.1),
        ("eps1", r.eps1),
        ("eps1_ci_low", r.ci1.0),
        ("eps1_ci_high", r.ci1.1),
        ("eps_avg", r.eps_avg),
        ("eps_avg_ci_low", lo),
        ("eps_avg_ci_high", hi),
    ] {
        b.set(format!("{prefix}.{key}"), value);
    }
}

fn simulate(cfg: &ExperimentConfig, b: &mut ResultBundle) -> Result<()> {
    let model = &cfg.model;
    let analytic = optimal_threshold(
        &count_pmf(model, QubitState::Dark)?,
        &count_pmf(model, QubitState::Bright)?,
    );
    let discriminators = [
        Discriminator::Threshold {
            threshold: analytic.threshold,
        },
        Discriminator::likelihood(*model),
    ];
    let dark = simulate_and_classify(
        model,
        QubitState::Dark,
        cfg.shots,
        domain_seed(cfg.seed, "simulate.dark"),
        &discriminators,
    )?;
    let bright = simulate_and_classify(
        model,
        QubitState::Bright,
        cfg.shots,
        domain_seed(cfg.seed, "simulate.bright"),
        &discriminators,
    )?;
    b.set("mc.threshold.threshold", analytic.threshold);
    for (i, d) in discriminators.iter().enumerate() {
        let tally = ErrorTally {
            dark_shots: cfg.shots,
            dark_errors: dark.errors[i],
            bright_shots: cfg.shots,
            bright_errors: bright.errors[i],
        };
        let report = tally.report(d.label())?;
        report_scalars(b, &format!("mc.{}", d.label()), &report);
        if i == 0 {
            let (lo, hi) = report.eps_avg_interval();
            b.set(
                "mc.threshold.analytic_in_ci",
                lo <= analytic.eps_avg && analytic.eps_avg <= hi,
            );
        }
    }
    b.tables
        .insert("histogram_dark".into(), histogram_table(&dark.histogram));
    b.tables.insert(
        "histogram_bright".into(),
        histogram_table(&bright.histogram),
    );
    Ok(())
}

/// Largest threshold listed in the threshold table.
const THRESHOLD_ROWS: usize = 10;

fn analyze(cfg: &ExperimentConfig, b: &mut ResultBundle) -> Result<()> {
    let dark = count_pmf(&cfg.model, QubitState::Dark)?;
    let bright = count_pmf(&cfg.model, QubitState::Bright)?;
    let best = optimal_threshold(&dark, &bright);
    b.set("analytic.threshold", best.threshold);
    b.set("analytic.eps0", best.eps0);
    b.set("analytic.eps1", best.eps1);
    b.set("analytic.eps_avg", best.eps_avg);
    b.set("analytic.fidelity", 1.0 - best.eps_avg);
    b.set("analytic.mean_dark", dark.mean());
    b.set("analytic.mean_bright", bright.mean());

    let mut pmf = ResultTable::new(&["n", "dark", "bright"]);
    for n in 0..=dark.n_max().max(bright.n_max()) {
        pmf.push(vec![n.into(), dark.get(n).into(), bright.get(n).into()]);
    }
    b.tables.insert("pmf".into(), pmf);

    let mut thresholds = ResultTable::new(&["threshold", "eps_avg", "eps0", "eps1"]);
    for th in 0..=THRESHOLD_ROWS.min(bright.n_max()) {
        let r = detection_errors(&dark, &bright, th);
        thresholds.push(vec![
            th.into(),
            r.eps_avg.into(),
            r.eps0.into(),
            r.eps1.into(),
        ]);
    }
    b.tables.insert("thresholds".into(), thresholds);
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, b: &mut ResultBundle) -> Result<()> {
    let durations = error_vs_duration(&cfg.model, &cfg.sweep.durations)?;
    let mut t = ResultTable::new(&["duration", "eps_avg", "eps0", "eps1", "threshold"]);
    for p in &durations {
        let r = &p.report;
        t.push(vec![
            p.duration.into(),
            r.eps_avg.into(),
            r.eps0.into(),
            r.eps1.into(),
            r.threshold.into(),
        ]);
    }
    let best = durations
        .iter()
        .min_by(|x, y| x.report.eps_avg.total_cmp(&y.report.eps_avg))
        .expect("non-empty grid");
    b.set("sweep.best_duration", best.duration);
    b.set("sweep.best_duration_eps_avg", best.report.eps_avg);
    b.tables.insert("duration_sweep".into(), t);

    let efficiencies = error_vs_efficiency(
        &cfg.rates,
        cfg.model.lambda_background,
        &cfg.sweep.efficiencies,
        &cfg.sweep.durations,
    )?;
    let mut t = ResultTable::new(&[
        "efficiency",
        "eps_avg",
        "duration",
        "threshold",
        "lambda_bright",
        "eps0",
        "eps1",
    ]);
    for p in &efficiencies {
        let r = &p.report;
        t.push(vec![
            p.efficiency.into(),
            r.eps_avg.into(),
            p.duration.into(),
            r.threshold.into(),
            p.lambda_bright.into(),
            r.eps0.into(),
            r.eps1.into(),
        ]);
    }
    b.tables.insert("efficiency_sweep".into(), t);

    let repump = &cfg.repump;
    let mut t = ResultTable::new(&["power", "rate", "flip_probability"]);
    for &power in &cfg.sweep.repump_powers {
        let rate = repump_leak_rate(repump.floor, repump.slope, power);
        t.push(vec![
            power.into(),
            rate.into(),
            flip_probability(rate, repump.duration).into(),
        ]);
    }
    b.set("repump.floor", repump.floor);
    b.set("repump.slope", repump.slope);
    b.tables.insert("repump".into(), t);
    Ok(())
}

/// Read binomial points from CSV: first column the abscissa, plus `probability` and `trials`.
pub fn read_fit_data(path: &Path) -> Result<Vec<BinomialPoint>> {
    let bad = |msg: String| Error::FitInput(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| bad(format!("missing column `{name}`")))
    };
    let (p_col, n_col) = (column("probability")?, column("trials")?);
    let mut points = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let row = line + 2;
        points.push(BinomialPoint {
            x: field(0)
                .parse()
                .map_err(|_| bad(format!("row {row}: bad abscissa {:?}", field(0))))?,
            probability: field(p_col)
                .parse()
                .map_err(|_| bad(format!("row {row}: bad probability")))?,
            trials: field(n_col)
                .parse()
                .map_err(|_| bad(format!("row {row}: bad trials")))?,
        });
    }
    Ok(points)
}

fn point_rows<M: CurveModel>(
    t: &mut ResultTable,
    series: &str,
    points: &[BinomialPoint],
    model: &M,
    fit: &FitResult,
) -> Result<()> {
    let p = [fit.params[0].value, fit.params[1].value];
    for pt in points {
        let k = (pt.probability * pt.trials as f64).round() as u64;
        let (lo, hi) = wilson_interval(k.min(pt.trials), pt.trials, 0.95)?;
        t.push(vec![
            pt.x.into(),
            pt.probability.into(),
            lo.into(),
            hi.into(),
            pt.trials.into(),
            model.value(pt.x, &p).into(),
            series.into(),
        ]);
    }
    Ok(())
}

fn param_rows(
    t: &mut ResultTable,
    b: &mut ResultBundle,
    series: &str,
    fit: &FitResult,
    truth: &[Option<f64>],
) {
    for (param, truth) in fit.params.iter().zip(truth) {
        t.push(vec![
            series.into(),
            param.name.as_str().into(),
            param.value.into(),
            param.ci_low.into(),
            param.ci_high.into(),
            (*truth).into(),
        ]);
        let key = format!("fit.{series}.{}", param.name);
        b.set(format!("{key}.value"), param.value);
        b.set(format!("{key}.ci_low"), param.ci_low);
        b.set(format!("{key}.ci_high"), param.ci_high);
    }
    b.set(format!("fit.{series}.converged"), fit.converged);
    b.set(format!("fit.{series}.residual_norm"), fit.residual_norm);
}

fn fit(cfg: &ExperimentConfig, b: &mut ResultBundle) -> Result<()> {
    let mut data = ResultTable::new(&[
        "x",
        "probability",
        "ci_low",
        "ci_high",
        "trials",
        "fitted",
        "series",
    ]);
    let mut params =
        ResultTable::new(&["series", "parameter", "value", "ci_low", "ci_high", "truth"]);
    match &cfg.fit {
        FitSource::Synthetic {
            points,
            trials,
            plateau,
        } => {
            for (series, rate) in [
                ("r_bright_to_dark", cfg.rates.r_bright_to_dark),
                ("r_dark_to_bright", cfg.rates.r_dark_to_bright),
            ] {
                if rate <= 0.0 {
                    continue;
                }
                let seed = domain_seed(cfg.seed, &format!("fit.{series}"));
                let pts = (1..=*points)
                    .map(|k| {
                        let t = k as f64 * 3.0 / (*points as f64 * rate);
                        let p = FlipCurveModel.value(t, &[rate, *plateau]);
                        let hits = Binomial::new(*trials, p)
                            .map_err(|e| Error::invalid("fit", e.to_string()))?
                            .sample(&mut substream(seed, k as u64));
                        Ok(BinomialPoint {
                            x: t,
                            probability: hits as f64 / *trials as f64,
                            trials: *trials,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let result = fit_flip_curve(&pts)?;
                point_rows(&mut data, series, &pts, &FlipCurveModel, &result)?;
                param_rows(
                    &mut params,
                    b,
                    series,
                    &result,
                    &[Some(rate), Some(*plateau)],
                );
            }
        }
        FitSource::Data { kind, path } => {
            let pts = read_fit_data(path)?;
            match kind {
                FitKind::Flip => {
                    let result = fit_flip_curve(&pts)?;
                    point_rows(&mut data, "data", &pts, &FlipCurveModel, &result)?;
                    param_rows(&mut params, b, "data", &result, &[None, None]);
                }
                FitKind::Ramsey => {
                    let result = fit_ramsey_fringe(&pts)?;
                    point_rows(&mut data, "data", &pts, &RamseyModel, &result)?;
                    param_rows(&mut params, b, "data", &result, &[None, None]);
                }
            }
        }
    }
    b.tables.insert("fit_data".into(), data);
    b.tables.insert("fit_params".into(), params);
    Ok(())
}

fn midcircuit(cfg: &ExperimentConfig, b: &mut ResultBundle) -> Result<()> {
    let settings = &cfg.midcircuit;
    let phases = phase_grid(settings.phases);
    let mut summary = ResultTable::new(&["sequence", "predicted", "value", "ci_low", "ci_high"]);
    let mut fringes = ResultTable::new(&[
        "phase",
        "probability",
        "ci_low",
        "ci_high",
        "trials",
        "fitted",
        "sequence",
    ]);
    b.set("midcircuit.t_lightshift", settings.base.t_lightshift);
    for sequence in Sequence::ALL {
        let mc = settings.base.with_sequence(sequence);
        let predicted = predicted_contrast(&mc)?;
        let seed = domain_seed(cfg.seed, &format!("midcircuit.{}", sequence.name()));
        let pts = simulate_ramsey(&mc, &phases, settings.shots_per_phase, seed)?;
        let result = fit_ramsey_fringe(&pts)?;
        let contrast = &result.params[0];
        summary.push(vec![
            sequence.name().into(),
            predicted.into(),
            contrast.value.into(),
            contrast.ci_low.into(),
            contrast.ci_high.into(),
        ]);
        point_rows(&mut fringes, sequence.name(), &pts, &RamseyModel, &result)?;
        let key = format!("midcircuit.{}", sequence.name());
        b.set(format!("{key}.predicted"), predicted);
        b.set(format!("{key}.fitted"), contrast.value);
        b.set(format!("{key}.ci_low"), contrast.ci_low);
        b.set(format!("{key}.ci_high"), contrast.ci_high);
    }
    b.tables.insert("midcircuit".into(), summary);
    b.tables.insert("ramsey".into(), fringes);
    Ok(())
}

fn budget(cfg: &ExperimentConfig, b: &mut ResultBundle) -> Result<()> {
    let mut t = ResultTable::new(&["factor", "value", "cumulative"]);
    let mut cumulative = 1.0;
    for (name, value) in cfg.budget.factors() {
        cumulative *= value;
        t.push(vec![
            name.as_str().into(),
            Cell::Float(*value),
            cumulative.into(),
        ]);
    }
    b.tables.insert("budget".into(), t);
    let total = cfg.budget.total();
    let scatter = cfg.rates.saturated_scatter_rate;
    b.set("budget.total", total);
    b.set(
        "budget.collected_rate",
        collected_photon_rate(scatter, total)?,
    );
    b.set(
        "physics.collected_rate",
        collected_photon_rate(scatter, COLLECTION_EFFICIENCY)?,
    );
    b.set("physics.lifetime_floor", cfg.repump.floor);
    b.set(
        "physics.shelved_rate_above_floor",
        RateConstants::measured(Scheme::Shelving).r_dark_to_bright >= cfg.repump.floor,
    );
    b.set(
        "physics.shelving_leak_probability",
        shelving_leak_probability(&cfg.branching)?,
    );
    b.set(
        "physics.suppression_factor",
        suppression_factor(&cfg.branching)?,
    );
    b.set(
        "physics.measured_rate_ratio",
        RateConstants::measured(Scheme::Hyperfine).r_bright_to_dark
            / RateConstants::measured(Scheme::Shelving).r_bright_to_dark,
    );
    b.set(
        "physics.mid_circuit_transfer_error",
        cfg.midcircuit.base.transfer_error,
    );
    b.set(
        "physics.two_step_transfer_error",
        two_step_transfer_error(1e-2, 1e-2)?,
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{parse_config, serialize_results};

    fn only(analysis: &str, extra: &str) -> ExperimentConfig {
        parse_config(&format!("analyses = [\"{analysis}\"]\n{extra}")).unwrap()
    }

    #[test]
    fn budget_only_run() {
        let b = run_experiment(&only("budget", "")).unwrap();
        let total = b.scalar("budget.total").unwrap();
        assert!((total - 0.007752).abs() < 1e-12);
        assert!((b.scalar("physics.suppression_factor").unwrap() - 53.4666667).abs() < 1e-6);
        assert_eq!(b.tables.len(), 1);
    }

    #[test]
    fn analytic_outputs_ignore_seed() {
        let a = run_experiment(&only("analyze", "seed = 1")).unwrap();
        let mut c = run_experiment(&only("analyze", "seed = 2")).unwrap();
        c.summary
            .insert("config.seed".into(), a.summary["config.seed"].clone());
        assert_eq!(a, c);
        assert!((a.scalar("analytic.eps_avg").unwrap() - 7.2646754e-4).abs() < 1e-11);
    }

    #[test]
    fn seed_changes_histograms_only() {
        let cfg = |seed| only("simulate", &format!("seed = {seed}\nshots = 2000"));
        let a = run_experiment(&cfg(1)).unwrap();
        let c = run_experiment(&cfg(2)).unwrap();
        assert_ne!(a.tables["histogram_bright"], c.tables["histogram_bright"]);
        assert_eq!(
            a.summary["mc.threshold.threshold"],
            c.summary["mc.threshold.threshold"]
        );
    }

    #[test]
    fn stage_errors_carry_context() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = only(
            "fit",
            &format!(
                "[fit]\nkind = \"flip\"\ndata = \"{}\"",
                dir.path().join("none.csv").display()
            ),
        );
        match run_experiment(&cfg) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "fit"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fit_from_csv_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flips.csv");
        let mut text = String::from("duration,probability,trials\n");
        for k in 1..=6 {
            let t = 200.0 * k as f64;
            text.push_str(&format!("{t},{},1000\n", 0.75 * flip_probability(1e-3, t)));
        }
        std::fs::write(&path, text).unwrap();
        let cfg = only(
            "fit",
            &format!("[fit]\nkind = \"flip\"\ndata = \"{}\"", path.display()),
        );
        let b = run_experiment(&cfg).unwrap();
        assert!((b.scalar("fit.data.rate.value").unwrap() - 1e-3).abs() < 1e-5);
        assert_eq!(b.tables["fit_data"].rows.len(), 6);
    }

    #[test]
    fn efficiency_sweep_file_is_monotone() {
        let b = run_experiment(&only("sweep", "")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        serialize_results(&b, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("efficiency_sweep.csv")).unwrap();
        let rows: Vec<(f64, f64)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let mut f = l.split(',').map(|x| x.parse::<f64>().unwrap());
                (f.next().unwrap(), f.next().unwrap())
            })
            .collect();
        assert!(rows.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 <= w[0].1));
    }

    #[test]
    fn histogram_csv_is_lossless() {
        let b = run_experiment(&only("simulate", "shots = 3000")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        serialize_results(&b, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("histogram_bright.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("n,count"));
        let total: u64 = lines
            .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 3000);
    }
}
