//! CSV output and plain-text tables for experiment results. Floats are
//! written in `{:.16e}` form so files round-trip exactly.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::InitKind;
use super::runner::{MseStudy, ReplicateRow, StabilityRow, SubsampleRow, TargetSummary};

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

pub fn method_label(kind: InitKind) -> &'static str {
    match kind {
        InitKind::Standard => "standard",
        InitKind::Fixed => "segmented_fixed",
        InitKind::Estimated => "segmented_estimated",
        InitKind::Predictor => "segmented_predictor",
    }
}

/// `runs.csv` -> `runs.summary.csv`
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.summary.csv"))
}

pub fn write_mse_study<W: Write>(w: W, study: &MseStudy) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["u".to_string(), "oracle".to_string()];
    for &m in &study.methods {
        header.push(format!("mse_{}", method_label(m)));
        header.push(format!("stderr_{}", method_label(m)));
    }
    out.write_record(&header)?;
    for (j, &u) in study.coords.iter().enumerate() {
        let mut rec = vec![u.to_string(), fmt(study.oracle[j])];
        for cells in &study.mse {
            rec.push(fmt(cells[j].mean));
            rec.push(fmt(cells[j].stderr));
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_replicates<W: Write>(w: W, rows: &[ReplicateRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = rows.first() else { return Ok(()) };
    let mut header = vec!["replicate".to_string(), "log_lambda_oracle".to_string()];
    let has = [first.log_lambda_chain.is_some(), first.log_lambda_product.is_some(), first.log_lambda_sub.is_some()];
    for (name, on) in ["log_lambda_chain", "log_lambda_product", "log_lambda_sub"].iter().zip(has) {
        if on {
            header.push(name.to_string());
        }
    }
    for c in &first.coords {
        header.push(format!("psi_u{}", c.u));
        header.push(format!("oracle_u{}", c.u));
        header.push(format!("stderr_u{}", c.u));
        header.extend((1..=c.sigma2.len()).map(|m| format!("sigma2_u{}_m{m}", c.u)));
        header.extend((1..=c.allocation.len()).map(|m| format!("alloc_u{}_m{m}", c.u)));
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.replicate.to_string(), fmt(r.log_lambda_oracle)];
        for (v, on) in [r.log_lambda_chain, r.log_lambda_product, r.log_lambda_sub].into_iter().zip(has) {
            if on {
                rec.push(fmt_opt(v));
            }
        }
        for c in &r.coords {
            rec.extend([fmt(c.psi_tilde), fmt(c.oracle), fmt(c.stderr)]);
            rec.extend(c.sigma2.iter().map(|&s| fmt(s)));
            rec.extend(c.allocation.iter().map(|k| k.to_string()));
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(w: W, summary: &[TargetSummary]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "target",
        "mean_estimate",
        "mean_oracle",
        "mse",
        "empirical_var",
        "empirical_stderr",
        "median_estimated_var",
        "calibration_ratio",
        "skewness",
        "excess_kurtosis",
    ])?;
    for s in summary {
        out.write_record([
            s.target.clone(),
            fmt(s.mean_estimate),
            fmt(s.mean_oracle),
            fmt(s.mse),
            fmt(s.empirical_var),
            fmt(s.empirical_stderr),
            fmt_opt(s.median_estimated_var),
            fmt_opt(s.calibration_ratio),
            fmt_opt(s.skewness),
            fmt_opt(s.excess_kurtosis),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_stability<W: Write>(w: W, rows: &[StabilityRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["horizon", "u", "mse_standard", "stderr_standard", "mse_segmented", "stderr_segmented"])?;
    for r in rows {
        out.write_record([
            r.horizon.to_string(),
            r.u.to_string(),
            fmt(r.standard.mean),
            fmt(r.standard.stderr),
            fmt(r.segmented.mean),
            fmt(r.segmented.stderr),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_subsample<W: Write>(w: W, rows: &[SubsampleRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["draw", "exponent", "pairs", "log_lambda_full", "mean_log_sub", "var_log_sub"])?;
    for r in rows {
        out.write_record([
            r.draw.to_string(),
            fmt(r.exponent),
            r.pairs.to_string(),
            fmt(r.log_lambda_full),
            fmt(r.mean_log_sub),
            fmt(r.var_log_sub),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_subsample_summary<W: Write>(w: W, medians: &[(f64, usize, f64)]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["exponent", "pairs", "median_var_log_sub"])?;
    for &(s, v, m) in medians {
        out.write_record([fmt(s), v.to_string(), fmt(m)])?;
    }
    out.flush()?;
    Ok(())
}

/// MSE table scaled by 100, one line per coordinate.
pub fn format_mse_study(study: &MseStudy) -> String {
    let mut s = format!("{:>4} {:>8}", "u", "oracle");
    for &m in &study.methods {
        s += &format!(" {:>24}", method_label(m));
    }
    s += "\n";
    for (j, &u) in study.coords.iter().enumerate() {
        let _ = write!(s, "{u:>4} {:>8.2}", study.oracle[j]);
        for cells in &study.mse {
            let _ = write!(s, " {:>24}", format!("{:.3} ± {:.3}", 100.0 * cells[j].mean, 100.0 * cells[j].stderr));
        }
        s += "\n";
    }
    s + "(MSE x 1e-2 ± Monte Carlo stderr)\n"
}

pub fn format_summary(summary: &[TargetSummary]) -> String {
    let mut s = format!(
        "{:<22} {:>12} {:>12} {:>12} {:>12} {:>12} {:>9} {:>9}\n",
        "target", "mean", "oracle", "emp_var", "emp_stderr", "med_est_var", "skew", "exkurt"
    );
    let opt = |x: Option<f64>, w: usize| x.map(|v| format!("{v:>w$.4}")).unwrap_or_else(|| format!("{:>w$}", "-"));
    for t in summary {
        let _ = writeln!(
            s,
            "{:<22} {:>12.5} {:>12.5} {:>12.4e} {:>12.4e} {} {} {}",
            t.target,
            t.mean_estimate,
            t.mean_oracle,
            t.empirical_var,
            t.empirical_stderr,
            t.median_estimated_var.map(|v| format!("{v:>12.4e}")).unwrap_or_else(|| format!("{:>12}", "-")),
            opt(t.skewness, 9),
            opt(t.excess_kurtosis, 9),
        );
    }
    s
}

pub fn format_stability(rows: &[StabilityRow]) -> String {
    let mut s = format!("{:>7} {:>4} {:>22} {:>22}\n", "horizon", "u", "standard", "segmented");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>7} {:>4} {:>22} {:>22}",
            r.horizon,
            r.u,
            format!("{:.3} ± {:.3}", 100.0 * r.standard.mean, 100.0 * r.standard.stderr),
            format!("{:.3} ± {:.3}", 100.0 * r.segmented.mean, 100.0 * r.segmented.stderr),
        );
    }
    s + "(MSE x 1e-2 ± Monte Carlo stderr)\n"
}

pub fn format_subsample(medians: &[(f64, usize, f64)]) -> String {
    let mut s = format!("{:>8} {:>8} {:>20}\n", "exponent", "pairs", "median var(log)");
    for &(e, v, m) in medians {
        let _ = writeln!(s, "{e:>8.2} {v:>8} {m:>20.6e}");
    }
    s
}
