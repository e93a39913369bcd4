//! CSV and plot-data serialisation. Every writer is a pure function of its
//! input, so equal inputs give equal bytes.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::abs::{Ensemble, ReplicationResult};
use crate::sds::Trajectory;

use super::HarnessError;

/// Shortest text that parses back to exactly `x`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> io::Result<()> {
    w.flush()
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// `t,<name>...`, one row per grid point.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, w: W) -> io::Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(traj.names.iter().cloned());
    out.write_record(&header).map_err(csv_io)?;
    for (i, &t) in traj.times.iter().enumerate() {
        let mut row = vec![format_float(t)];
        row.extend(traj.series.iter().map(|s| format_float(s[i])));
        out.write_record(&row).map_err(csv_io)?;
    }
    finish(out)
}

/// `t,<class>_mean,<class>_sd,<class>_ci95...`.
pub fn write_ensemble_csv<W: Write>(ensemble: &Ensemble, w: W) -> io::Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["t".to_string()];
    for c in &ensemble.class_names {
        header.extend([format!("{c}_mean"), format!("{c}_sd"), format!("{c}_ci95")]);
    }
    out.write_record(&header).map_err(csv_io)?;
    if ensemble.is_empty() {
        return finish(out);
    }
    for (i, &t) in ensemble.times.iter().enumerate() {
        let mut row = vec![format_float(t)];
        for c in 0..ensemble.class_names.len() {
            row.extend([
                format_float(ensemble.mean[c][i]),
                format_float(ensemble.sd[c][i]),
                format_float(ensemble.ci95[c][i]),
            ]);
        }
        out.write_record(&row).map_err(csv_io)?;
    }
    finish(out)
}

/// `t,<class>...` with integer counts.
pub fn write_replication_csv<W: Write>(rep: &ReplicationResult, w: W) -> io::Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(rep.class_names.iter().cloned());
    out.write_record(&header).map_err(csv_io)?;
    for (i, &t) in rep.times.iter().enumerate() {
        let mut row = vec![format_float(t)];
        row.extend(rep.series.iter().map(|s| s[i].to_string()));
        out.write_record(&row).map_err(csv_io)?;
    }
    finish(out)
}

/// `replication,step,kills,hunters,prey` for every spatial step.
pub fn write_kills_csv<W: Write>(replications: &[ReplicationResult], w: W) -> io::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["replication", "step", "kills", "hunters", "prey"])
        .map_err(csv_io)?;
    for (r, rep) in replications.iter().enumerate() {
        for k in &rep.kills {
            out.write_record([
                r.to_string(),
                k.step.to_string(),
                k.kills().to_string(),
                k.hunters.to_string(),
                k.prey.to_string(),
            ])
            .map_err(csv_io)?;
        }
    }
    finish(out)
}

/// Two whitespace-separated columns, `t value`, for external plotting.
pub fn plot_data(times: &[f64], values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(times.len() * 24);
    for (t, v) in times.iter().zip(values) {
        let _ = writeln!(out, "{} {}", format_float(*t), format_float(*v));
    }
    out
}

/// Anything with a CSV form.
pub enum CsvSource<'a> {
    Trajectory(&'a Trajectory),
    Ensemble(&'a Ensemble),
    Replication(&'a ReplicationResult),
}

pub fn to_csv_bytes(source: CsvSource<'_>) -> Vec<u8> {
    let mut buf = Vec::new();
    let written = match source {
        CsvSource::Trajectory(t) => write_trajectory_csv(t, &mut buf),
        CsvSource::Ensemble(e) => write_ensemble_csv(e, &mut buf),
        CsvSource::Replication(r) => write_replication_csv(r, &mut buf),
    };
    written.expect("writing to memory cannot fail");
    buf
}

/// Writes `source` as CSV to `path`.
pub fn write_csv(source: CsvSource<'_>, path: &Path) -> Result<(), HarnessError> {
    fs::write(path, to_csv_bytes(source)).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_trajectory() {
        let mut t = Trajectory::new(vec!["E".into(), "T".into()]);
        t.push(0.0, &[5.0, 100.0]);
        t.push(0.5, &[5.25, 1e-27]);
        let text = String::from_utf8(to_csv_bytes(CsvSource::Trajectory(&t))).unwrap();
        assert_eq!(text, "t,E,T\n0,5,100\n0.5,5.25,1e-27\n");
    }

    #[test]
    fn empty_ensemble_is_header_only() {
        let e = Ensemble::from_replications(vec!["E".into()], vec![], vec![]);
        let text = String::from_utf8(to_csv_bytes(CsvSource::Ensemble(&e))).unwrap();
        assert_eq!(text, "t,E_mean,E_sd,E_ci95\n");
    }

    #[test]
    fn plot_rows() {
        assert_eq!(plot_data(&[0.0, 0.1], &[2.0, 3.5]), b"0 2\n0.1 3.5\n");
    }

    proptest! {
        #[test]
        fn floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
            prop_assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }
}
