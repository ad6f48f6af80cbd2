//! Plain-text matrix and transfer-matrix format.
//!
//! A transfer-matrix block is a header line `rows cols start horizon`
//! followed by the coefficients `X(start) .. X(horizon)` in spectral order,
//! each written row-major, one matrix row per line, whitespace separated.
//! A plain matrix block has the header `rows cols`. Text after `#` on a
//! line is ignored, so files may carry comments. Several blocks may follow
//! each other in one file (a system file is `A` then `B`; a mask file is
//! the `Rc` pattern then the `Mc` pattern, with 0/1 entries).

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::clsyn::ClosedLoopMaps;
use crate::error::{Error, Result};
use crate::fir::{FirMatrix, LtiSystem};
use crate::implsyn::ImplementationMatrices;
use crate::sparsity::SparsityMask;

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = format!("{} {}\n", m.nrows(), m.ncols());
    push_rows(&mut s, m);
    s
}

pub fn format_fir(x: &FirMatrix) -> String {
    let mut s = format!("{} {} {} {}\n", x.rows(), x.cols(), x.start(), x.horizon());
    for c in x.coeffs() {
        push_rows(&mut s, c);
    }
    s
}

fn push_rows(s: &mut String, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
}

pub fn format_mask(mask: &SparsityMask) -> String {
    let as_fir = |pats: &[DMatrix<bool>]| {
        let coeffs = pats.iter().map(|p| p.map(|b| if b { 1.0 } else { 0.0 })).collect();
        FirMatrix::new(1, coeffs).expect("mask patterns are consistent")
    };
    let mut s = String::new();
    for (pats, label) in [(mask.patterns_r(), "Rc"), (mask.patterns_m(), "Mc")] {
        let x = as_fir(pats);
        let _ = writeln!(s, "# {label} support pattern");
        let _ = writeln!(s, "{} {} {} {}", x.rows(), x.cols(), x.start(), x.horizon());
        for c in x.coeffs() {
            for row in c.row_iter() {
                let line: Vec<&str> = row.iter().map(|&v| if v != 0.0 { "1" } else { "0" }).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
    }
    s
}

/// Sequential reader over the tokens of a text document.
pub struct Reader<'a> {
    tokens: Vec<&'a str>,
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(text: &'a str) -> Self {
        let tokens = text
            .lines()
            .flat_map(|l| l.split('#').next().unwrap_or("").split_whitespace())
            .collect();
        Self { tokens, pos: 0 }
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn next<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self
            .tokens
            .get(self.pos)
            .ok_or_else(|| Error::Parse(format!("unexpected end of input reading {what}")))?;
        self.pos += 1;
        tok.parse()
            .map_err(|_| Error::Parse(format!("bad {what}: {tok:?}")))
    }

    fn entries(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut vals = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            vals.push(self.next::<f64>("matrix entry")?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    }

    pub fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.next("row count")?;
        let cols = self.next("column count")?;
        self.entries(rows, cols)
    }

    pub fn fir(&mut self) -> Result<FirMatrix> {
        let rows: usize = self.next("row count")?;
        let cols: usize = self.next("column count")?;
        let start: usize = self.next("start index")?;
        let horizon: usize = self.next("horizon")?;
        if horizon < start {
            return Err(Error::Parse(format!("horizon {horizon} < start {start}")));
        }
        let coeffs = (start..=horizon)
            .map(|_| self.entries(rows, cols))
            .collect::<Result<Vec<_>>>()?;
        FirMatrix::new(start, coeffs)
    }

    pub fn finish(&self) -> Result<()> {
        if self.is_exhausted() {
            Ok(())
        } else {
            Err(Error::Parse(format!(
                "{} trailing tokens",
                self.tokens.len() - self.pos
            )))
        }
    }
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut r = Reader::new(text);
    let m = r.matrix()?;
    r.finish()?;
    Ok(m)
}

pub fn parse_fir(text: &str) -> Result<FirMatrix> {
    let mut r = Reader::new(text);
    let x = r.fir()?;
    r.finish()?;
    Ok(x)
}

pub fn parse_mask(text: &str) -> Result<SparsityMask> {
    let mut r = Reader::new(text);
    let pr = r.fir()?;
    let pm = r.fir()?;
    r.finish()?;
    let to_bool = |x: &FirMatrix| -> Result<Vec<DMatrix<bool>>> {
        if x.start() != 1 {
            return Err(Error::Parse("mask patterns start at spectral index 1".into()));
        }
        x.coeffs()
            .iter()
            .map(|c| {
                if c.iter().all(|&v| v == 0.0 || v == 1.0) {
                    Ok(c.map(|v| v == 1.0))
                } else {
                    Err(Error::Parse("mask entries must be 0 or 1".into()))
                }
            })
            .collect()
    };
    SparsityMask::new(to_bool(&pr)?, to_bool(&pm)?)
}

/// System file: `A` block then `B` block.
pub fn parse_system(text: &str) -> Result<LtiSystem> {
    let mut r = Reader::new(text);
    let a = r.matrix()?;
    let b = r.matrix()?;
    r.finish()?;
    LtiSystem::new(a, b)
}

pub fn format_system(sys: &LtiSystem) -> String {
    format!(
        "# A\n{}# B\n{}",
        format_matrix(sys.a()),
        format_matrix(sys.b())
    )
}

fn parse_pair(text: &str) -> Result<(FirMatrix, FirMatrix)> {
    let mut r = Reader::new(text);
    let x = r.fir()?;
    let y = r.fir()?;
    r.finish()?;
    Ok((x, y))
}

/// Implementation file: `Rc` block then `Mc` block.
pub fn parse_implementation(text: &str) -> Result<ImplementationMatrices> {
    let (r_c, m_c) = parse_pair(text)?;
    ImplementationMatrices::new(r_c, m_c)
}

pub fn format_implementation(imp: &ImplementationMatrices) -> String {
    format!("# Rc\n{}# Mc\n{}", format_fir(imp.r_c()), format_fir(imp.m_c()))
}

/// Closed-loop file: `Φx` block then `Φu` block.
pub fn parse_clmaps(text: &str) -> Result<ClosedLoopMaps> {
    let (phi_x, phi_u) = parse_pair(text)?;
    ClosedLoopMaps::new(phi_x, phi_u)
}

pub fn format_clmaps(cl: &ClosedLoopMaps) -> String {
    format!("# Phi_x\n{}# Phi_u\n{}", format_fir(&cl.phi_x), format_fir(&cl.phi_u))
}

pub fn read_fir_file(path: impl AsRef<Path>) -> Result<FirMatrix> {
    parse_fir(&std::fs::read_to_string(path)?)
}

pub fn write_fir_file(path: impl AsRef<Path>, x: &FirMatrix) -> Result<()> {
    std::fs::write(path, format_fir(x))?;
    Ok(())
}
