//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::process::ExitCode;
use std::time::Instant;

use freqlfdr::quad;
use freqlfdr::simulate::harness::mc_error_rates_range;
use freqlfdr::simulate::mfdr_pfdr_limit_check;
use freqlfdr::verify::{self, CheckOutcome};
use freqlfdr::Result;

const SEED: u64 = 20_251_015;

fn exact_bfdr() -> Result<Vec<CheckOutcome>> {
    [0.1, 0.3]
        .into_iter()
        .map(|alpha| verify::exact_bfdr_check(alpha, 100_000, SEED, None))
        .collect()
}

fn superuniform() -> Result<Vec<CheckOutcome>> {
    verify::superuniform_checks(100_000, SEED, None)
}

fn discrete_counterexample() -> Result<Vec<CheckOutcome>> {
    verify::discrete_counterexample_checks(100_000, SEED, None)
}

fn calibration() -> Result<Vec<CheckOutcome>> {
    verify::calibration_checks(500, SEED, None)
}

fn grenander() -> Result<Vec<CheckOutcome>> {
    verify::grenander_oracle_checks(1000, SEED)
}

fn clfdr() -> Result<Vec<CheckOutcome>> {
    verify::clfdr_identity_checks(SEED)
}

fn duality() -> Result<Vec<CheckOutcome>> {
    Ok(vec![verify::q_bh_duality_check(1000, SEED)?])
}

/// Library mFDR against an independent quadrature of the interval masses,
/// then the shrinking-window criterion itself.
fn interval_limit() -> Result<Vec<CheckOutcome>> {
    let spec = verify::gaussian_two_groups();
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let lfdr0 = 0.95 * phi(0.0) / (0.95 * phi(0.0) + 0.05 * phi(2.0));
    let records = mfdr_pfdr_limit_check(&spec, 0.0, &verify::INTERVAL_EPS, None)?;
    let mut out = Vec::new();
    for r in &records {
        let null = quad::integrate(|x| 0.95 * phi(x), -r.eps, r.eps, 1e-14);
        let alt = quad::integrate(|x| 0.05 * phi(x - 2.0), -r.eps, r.eps, 1e-14);
        out.push(CheckOutcome::within(
            format!("mfdr quadrature eps={}", r.eps),
            r.mfdr,
            null / (null + alt),
            1e-9,
        ));
        out.push(CheckOutcome::within(
            format!("deviation eps={}", r.eps),
            r.mfdr_deviation,
            (r.mfdr - lfdr0).abs(),
            1e-12,
        ));
    }
    out.extend(verify::interval_limit_checks()?);
    Ok(out)
}

fn discrete_limit() -> Result<Vec<CheckOutcome>> {
    let f_star = verify::discrete_limit_f_star();
    let mut out = vec![CheckOutcome::within(
        "f* unit mass",
        (1..=10)
            .map(|k| f_star.density(k as f64 / 10.0).unwrap())
            .sum(),
        1.0,
        1e-12,
    )];
    out.extend(verify::discrete_limit_checks(20_000, SEED, None)?);
    Ok(out)
}

fn null_density() -> Result<Vec<CheckOutcome>> {
    verify::null_density_checks()
}

/// Same seed, byte-identical JSON; two halves merged equal the whole.
fn determinism() -> Result<Vec<CheckOutcome>> {
    let (spec, config) = verify::determinism_design(SEED)?;
    let n = 4_000;
    let json = |threads: Option<usize>| -> Result<String> {
        Ok(serde_json::to_string(&mc_error_rates_range(&spec, &config, 0, n, threads)?).unwrap())
    };
    let first = json(Some(1))?;
    let second = json(Some(1))?;
    let parallel = json(Some(8))?;
    let split = mc_error_rates_range(&spec, &config, 0, 1_234, None)?.merge(
        &mc_error_rates_range(&spec, &config, 1_234, n - 1_234, None)?,
    )?;
    let merged = serde_json::to_string(&split).unwrap();
    let differs = |a: &str, b: &str| (a != b) as u8 as f64;
    let mut out = vec![
        CheckOutcome::within("json repeat", differs(&first, &second), 0.0, 0.0),
        CheckOutcome::within(
            "json across thread counts",
            differs(&first, &parallel),
            0.0,
            0.0,
        ),
        CheckOutcome::within("json split-and-merge", differs(&first, &merged), 0.0, 0.0),
    ];
    out.extend(verify::determinism_checks(2_000, SEED)?);
    Ok(out)
}

type Criterion = (&'static str, fn() -> Result<Vec<CheckOutcome>>);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("exact bFDR of SL under uniform nulls", exact_bfdr),
        ("super-uniform counterexample", superuniform),
        ("discrete counterexample", discrete_counterexample),
        ("calibration of oracle lfdr and q-values", calibration),
        ("Grenander vs brute-force hull", grenander),
        ("compound lfdr identities", clfdr),
        ("q-value / BH duality", duality),
        ("shrinking-interval mFDR limit", interval_limit),
        ("discrete-grid bFDR limit and perturbation", discrete_limit),
        ("one-sided null p-value density bound", null_density),
        ("determinism and merge law", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = match run() {
            Ok(outcomes) => {
                let ok = outcomes.iter().all(|o| o.passed);
                let detail = outcomes
                    .iter()
                    .map(|o| {
                        format!(
                            "{}{}: obs={:.6e} exp={:.6e} tol={:.2e}",
                            if o.passed { "" } else { "!" },
                            o.name,
                            o.observed,
                            o.expected,
                            o.tolerance
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("; ");
                (ok, detail)
            }
            Err(e) => (false, format!("error[{}]: {e}", e.code())),
        };
        failed += !ok as usize;
        println!(
            "criterion {:>2} {} {name} ({:.1}s) | {detail}",
            k + 1,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
