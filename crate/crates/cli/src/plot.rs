//! Generation of a self-contained gnuplot script over the emitted CSVs.

use crate::run::RunError;
use std::path::{Path, PathBuf};

const KNOWN: &[&str] = &[
    "converge_norms.csv",
    "remainder_curves.csv",
    "forward_fan.csv",
    "bond_surface.csv",
    "martingale_drift.csv",
    "resolvent_differences.csv",
    "functional_remainders.csv",
    "ensemble_summary.csv",
    "pricing_error.csv",
];

/// Build the script text for a set of available artifact names.
pub fn plot_script_for<'a>(names: impl Iterator<Item = &'a str>) -> Result<String, RunError> {
    let present: Vec<&str> = {
        let have: std::collections::BTreeSet<&str> = names.collect();
        KNOWN.iter().copied().filter(|k| have.contains(k)).collect()
    };
    if present.is_empty() {
        return Err(RunError::Io(format!(
            "no plottable CSV artifacts found; expected one of: {}",
            KNOWN.join(", ")
        )));
    }
    let mut s = String::from(
        "# gnuplot script generated alongside the run artifacts\n\
         set datafile separator \",\"\n\
         set terminal pngcairo size 1400,900\n",
    );
    let has = |n: &str| present.contains(&n);
    if has("converge_norms.csv") {
        s.push_str(
            "\nset output \"converge_slopes.png\"\n\
             set logscale xy\n\
             set xlabel \"eps\"\nset ylabel \"remainder C^p norm\"\n\
             plot for [mm=1:3] \"converge_norms.csv\" using ($2):((strcol(1) eq \"stochastic\") && ($1*0+column(2)>0) && (column(2)==column(2)) ? (column(4)*(column(2)==column(2)?1:1)) : 1/0) notitle with dots, \\\n\
                  \"converge_norms.csv\" using (column(3)):(column(4)) title \"cp norm\" with points\nunset logscale\n",
        );
    }
    if has("remainder_curves.csv") {
        s.push_str(
            "\nset output \"remainder_curves.png\"\n\
             set xlabel \"t\"\nset ylabel \"||R(t)||\"\n\
             plot \"remainder_curves.csv\" using 2:3 title \"empirical\" with points, \\\n\
                  \"remainder_curves.csv\" using 2:4 title \"three-term\" with points, \\\n\
                  \"remainder_curves.csv\" using 2:5 title \"bound\" with lines\n",
        );
    }
    if has("resolvent_differences.csv") {
        s.push_str(
            "\nset output \"resolvent_differences.png\"\n\
             set logscale xy\n\
             set xlabel \"eps\"\nset ylabel \"||R(eps)f - R(0)f||\"\n\
             plot \"resolvent_differences.csv\" using 3:4 notitle with points\nunset logscale\n",
        );
    }
    if has("functional_remainders.csv") {
        s.push_str(
            "\nset output \"functional_remainders.png\"\n\
             set logscale xy\n\
             set xlabel \"eps\"\nset ylabel \"mean |remainder|\"\n\
             plot \"functional_remainders.csv\" using 2:3 notitle with points\nunset logscale\n",
        );
    }
    if has("ensemble_summary.csv") {
        s.push_str(
            "\nset output \"ensemble_norms.png\"\n\
             set xlabel \"t\"\nset ylabel \"||u(t)||\"\n\
             plot \"ensemble_summary.csv\" using 1:2 title \"mean\" with lines, \\\n\
                  \"ensemble_summary.csv\" using 1:3 title \"q05\" with lines, \\\n\
                  \"ensemble_summary.csv\" using 1:5 title \"q95\" with lines\n",
        );
    }
    // The forward-rate experiment gets the three-panel figure: curve fan,
    // bond surface and drift diagnostic.
    if has("forward_fan.csv") && has("bond_surface.csv") && has("martingale_drift.csv") {
        s.push_str(
            "\nset output \"musiela_panels.png\"\n\
             set multiplot layout 1,3\n\
             set xlabel \"t\"\nset ylabel \"forward rate\"\n\
             plot \"forward_fan.csv\" using 1:3 title \"mean\" with points, \\\n\
                  \"forward_fan.csv\" using 1:4 title \"q05\" with dots, \\\n\
                  \"forward_fan.csv\" using 1:6 title \"q95\" with dots\n\
             set xlabel \"x\"\nset ylabel \"discounted bond\"\n\
             plot \"bond_surface.csv\" using 2:3 title \"mean B(t,x)\" with points\n\
             set xlabel \"eps\"\nset ylabel \"drift of mean B\"\n\
             plot \"martingale_drift.csv\" using 1:2 title \"drift\" with linespoints, \\\n\
                  \"martingale_drift.csv\" using 1:3 title \"3 sigma band\" with lines\n\
             unset multiplot\n",
        );
    }
    Ok(s)
}

/// Write `plots.gp` into a results directory based on the CSVs found there.
pub fn emit_plot_script(results_dir: &Path) -> Result<PathBuf, RunError> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(results_dir).map_err(|e| RunError::Io(e.to_string()))? {
        let entry = entry.map_err(|e| RunError::Io(e.to_string()))?;
        names.push(entry.file_name().to_string_lossy().to_string());
    }
    let script = plot_script_for(names.iter().map(|s| s.as_str()))?;
    let path = results_dir.join("plots.gp");
    std::fs::write(&path, script).map_err(|e| RunError::Io(e.to_string()))?;
    Ok(path)
}
