//! Plain-text policy sequences.
//!
//! ```text
//! sbs-policies 1
//! steps 2
//! dim 2
//! t 0 diagonal
//! a 0 0
//! b 0 0
//! c 0
//! t 1 full
//! a 0.5 0.1 0.1 0.5
//! b -1 2
//! c 3.25
//! ...
//! ```
//!
//! One block per time `t = 0..=T`. `a` lists the diagonal for `diagonal`
//! blocks and the row-major matrix for `full` blocks. Blank lines and lines
//! starting with `#` are ignored. Numbers are written in shortest round-trip
//! form, so reading back reproduces the coefficients exactly.

use std::fmt::Write as _;

use sbs_core::linalg::Matrix;
use sbs_core::policy::{PolicyMode, PolicySequence, QuadraticPolicy};

use crate::error::{Error, Result};

const MAGIC: &str = "sbs-policies 1";

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_policies(p: &PolicySequence) -> String {
    let mut s = String::new();
    let d = p.dim();
    writeln!(s, "{MAGIC}\nsteps {}\ndim {d}", p.steps()).unwrap();
    for (t, q) in p.policies.iter().enumerate() {
        let a = match q.mode() {
            PolicyMode::Diagonal => q.a_diag(),
            PolicyMode::Full => (0..d * d).map(|k| q.a_entry(k / d, k % d)).collect(),
        };
        let mode = match q.mode() {
            PolicyMode::Diagonal => "diagonal",
            PolicyMode::Full => "full",
        };
        writeln!(s, "t {t} {mode}\na {}\nb {}\nc {}", join(&a), join(q.b()), q.c()).unwrap();
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    /// Next non-empty line split as `(line number, key, rest)`.
    fn next(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        for (i, raw) in self.inner.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let k = parts.next().unwrap();
            if k != key {
                return Err(Error::PolicyFormat { line: i + 1, reason: format!("expected `{key}`, found `{k}`") });
            }
            return Ok((i + 1, parts.collect()));
        }
        Err(Error::PolicyFormat { line: 0, reason: format!("unexpected end of file, expected `{key}`") })
    }

    fn numbers(&mut self, key: &str, count: usize) -> Result<Vec<f64>> {
        let (line, parts) = self.next(key)?;
        if parts.len() != count {
            return Err(Error::PolicyFormat { line, reason: format!("`{key}` needs {count} values, found {}", parts.len()) });
        }
        parts
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| Error::PolicyFormat { line, reason: format!("`{p}` is not a number") }))
            .collect()
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let (line, parts) = self.next(key)?;
        match parts.as_slice() {
            [v] => v.parse().map_err(|_| Error::PolicyFormat { line, reason: format!("`{v}` is not a count") }),
            _ => Err(Error::PolicyFormat { line, reason: format!("`{key}` takes one value") }),
        }
    }
}

pub fn read_policies(text: &str) -> Result<PolicySequence> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let (line, v) = lines.next("sbs-policies")?;
    if v != ["1"] {
        return Err(Error::PolicyFormat { line, reason: "unsupported format version".into() });
    }
    let steps = lines.count("steps")?;
    let d = lines.count("dim")?;
    let mut policies = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let (line, parts) = lines.next("t")?;
        let mode = match parts.as_slice() {
            [tt, m] if tt.parse::<usize>() == Ok(t) => match *m {
                "full" => PolicyMode::Full,
                "diagonal" => PolicyMode::Diagonal,
                other => return Err(Error::PolicyFormat { line, reason: format!("unknown mode `{other}`") }),
            },
            _ => return Err(Error::PolicyFormat { line, reason: format!("expected `t {t} <mode>`") }),
        };
        let a = lines.numbers("a", if mode == PolicyMode::Full { d * d } else { d })?;
        let b = lines.numbers("b", d)?;
        let c = lines.numbers("c", 1)?[0];
        let q = match mode {
            PolicyMode::Full => QuadraticPolicy::full(&Matrix::from_row_slice(d, d, &a), &b, c)?,
            PolicyMode::Diagonal => QuadraticPolicy::diagonal(&a, &b, c)?,
        };
        policies.push(q);
    }
    Ok(PolicySequence { policies })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PolicySequence {
        let a = Matrix::from_row_slice(2, 2, &[0.7, -0.1 / 3.0, -0.1 / 3.0, 1e-300]);
        PolicySequence {
            policies: vec![
                QuadraticPolicy::identity(2, PolicyMode::Diagonal),
                QuadraticPolicy::full(&a, &[-1.5, 2.0f64.sqrt()], 1e10).unwrap(),
                QuadraticPolicy::diagonal(&[0.25, -0.125], &[0.0, -7.0], -0.3).unwrap(),
            ],
        }
    }

    #[test]
    fn reading_back_is_exact() {
        let p = sample();
        assert_eq!(read_policies(&write_policies(&p)).unwrap(), p);
    }

    #[test]
    fn documented_layout() {
        let text = write_policies(&sample());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(&lines[..4], ["sbs-policies 1", "steps 2", "dim 2", "t 0 diagonal"]);
        assert_eq!(lines[7], "t 1 full");
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# saved run\nsbs-policies 1\n\nsteps 0\ndim 1\nt 0 diagonal\na 0.5\nb 1\n# constant\nc 2\n";
        let p = read_policies(text).unwrap();
        assert_eq!(p.get(0), &QuadraticPolicy::diagonal(&[0.5], &[1.0], 2.0).unwrap());
    }

    #[test]
    fn errors_name_the_line() {
        let text = "sbs-policies 1\nsteps 0\ndim 2\nt 0 full\na 1 2 3\n";
        assert!(matches!(read_policies(text), Err(Error::PolicyFormat { line: 5, .. })));
        let text = "sbs-policies 1\nsteps 0\ndim 1\nt 0 banded\n";
        assert!(matches!(read_policies(text), Err(Error::PolicyFormat { line: 4, .. })));
        assert!(matches!(read_policies("sbs-policies 2\n"), Err(Error::PolicyFormat { line: 1, .. })));
    }
}
