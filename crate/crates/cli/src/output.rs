//! Output files. Every file is written to a temporary sibling and renamed
//! into place.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use metasimplex::dynamics::Trajectory;
use metasimplex::AssignmentState;
use nalgebra::DMatrix;

pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// `t, w{i}_{j}..., mean_payoff, min_row_entropy, max_row_entry`, where the
/// last column is the smallest row maximum (1 at an extremal point).
pub fn trajectory_csv(traj: &Trajectory<AssignmentState>) -> String {
    let mut out = String::from("t");
    if let Some(w) = traj.states.first() {
        for i in 0..w.n() {
            for j in 0..w.c() {
                write!(out, ",w{i}_{j}").unwrap();
            }
        }
    }
    out.push_str(",mean_payoff,min_row_entropy,max_row_entry\n");
    for ((t, w), d) in traj.times.iter().zip(&traj.states).zip(&traj.diagnostics) {
        write!(out, "{t}").unwrap();
        for row in w.as_matrix().row_iter() {
            for x in row.iter() {
                write!(out, ",{x}").unwrap();
            }
        }
        writeln!(out, ",{},{},{}", d.mean_payoff, d.min_row_entropy(), d.min_row_max()).unwrap();
    }
    out
}

pub fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (k, l) in history.iter().enumerate() {
        writeln!(out, "{k},{l}").unwrap();
    }
    out
}

/// One row per line, whitespace separated, 17 significant digits.
pub fn matrix_text(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
fn parse_matrix_text(text: &str) -> Option<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::parse).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()
        .ok()?;
    let c = rows.first()?.len();
    rows.iter().all(|r| r.len() == c).then(|| DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}
