//! Turn aggregated metrics into plot-ready panel files: one file per panel
//! (time-average regret, time-average violation), a `t` column plus
//! mean/stderr columns per algorithm.

use std::fmt::Write as _;
use std::path::Path;

use crate::runner::fmt_f64;
use crate::CliError;

struct AggregateSeries {
    name: String,
    t: Vec<usize>,
    regret_mean: Vec<f64>,
    regret_stderr: Vec<f64>,
    violation_mean: Vec<f64>,
    violation_stderr: Vec<f64>,
}

fn read_aggregate(path: &Path, name: String) -> Result<AggregateSeries, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CliError::Config(format!("{}: empty", path.display())))?;
    let expected = "t,regret_avg_mean,regret_avg_stderr,violation_avg_mean,violation_avg_stderr";
    if header != expected {
        return Err(CliError::Config(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut series = AggregateSeries {
        name,
        t: Vec::new(),
        regret_mean: Vec::new(),
        regret_stderr: Vec::new(),
        violation_mean: Vec::new(),
        violation_stderr: Vec::new(),
    };
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(CliError::Config(format!("{}: malformed row {line:?}", path.display())));
        }
        let parse = |s: &str| -> Result<f64, CliError> {
            s.parse().map_err(|_| CliError::Config(format!("{}: bad float {s:?}", path.display())))
        };
        series.t.push(
            cells[0]
                .parse()
                .map_err(|_| CliError::Config(format!("{}: bad slot {:?}", path.display(), cells[0])))?,
        );
        series.regret_mean.push(parse(cells[1])?);
        series.regret_stderr.push(parse(cells[2])?);
        series.violation_mean.push(parse(cells[3])?);
        series.violation_stderr.push(parse(cells[4])?);
    }
    Ok(series)
}

fn panel_csv(
    series: &[AggregateSeries],
    select: impl Fn(&AggregateSeries) -> (&[f64], &[f64]),
) -> String {
    let mut header = String::from("t");
    for s in series {
        let _ = write!(header, ",{}_mean,{}_stderr", s.name, s.name);
    }
    let mut text = header + "\n";
    let horizon = series[0].t.len();
    for i in 0..horizon {
        let _ = write!(text, "{}", series[0].t[i]);
        for s in series {
            let (mean, stderr) = select(s);
            let _ = write!(text, ",{},{}", fmt_f64(mean[i]), fmt_f64(stderr[i]));
        }
        text.push('\n');
    }
    text
}

/// Read `<input>/aggregate/*.csv` and write the two panel files into `output`.
pub fn emit_plot_data(input: &Path, output: &Path) -> Result<(), CliError> {
    let aggregate_dir = input.join("aggregate");
    let mut files: Vec<_> = std::fs::read_dir(&aggregate_dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", aggregate_dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("no aggregate CSVs under {}", aggregate_dir.display())));
    }
    let mut series = Vec::new();
    for path in &files {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::Config(format!("bad file name {}", path.display())))?
            .to_string();
        series.push(read_aggregate(path, name)?);
    }
    let horizon = series[0].t.len();
    if series.iter().any(|s| s.t.len() != horizon) {
        return Err(CliError::Config("aggregate files disagree on horizon".into()));
    }
    std::fs::create_dir_all(output)?;
    std::fs::write(
        output.join("time_avg_regret.csv"),
        panel_csv(&series, |s| (&s.regret_mean, &s.regret_stderr)),
    )?;
    std::fs::write(
        output.join("time_avg_violation.csv"),
        panel_csv(&series, |s| (&s.violation_mean, &s.violation_stderr)),
    )?;
    Ok(())
}
