use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use super::source::{packed, CorrelatorSource, Quad, SourceTag, Traversal};
use crate::dynamics::{Ordering, TimeGrid};
use crate::error::{Error, Result};

/// Tags of the equal-time rows stored alongside the simplex values.
pub const A_TAG: &str = "A";
pub const STRING_TAGS: [&str; 5] = ["OOOOA", "OOOAO", "OOAOO", "OAOOO", "AOOOO"];

/// Materialised correlators for a single coupling channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorGrid {
    grid: TimeGrid,
    tag: SourceTag,
    values: Vec<Quad>,
    a_value: Complex64,
    strings: Option<[Complex64; 5]>,
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

impl CorrelatorGrid {
    /// Builds a grid from a closure over `(i, j)`, `i ≥ j`.
    pub fn from_fn(
        grid: TimeGrid,
        tag: SourceTag,
        a_value: Complex64,
        f: impl Fn(usize, usize) -> Quad,
    ) -> Self {
        let n = grid.n_steps;
        let mut values = Vec::with_capacity(packed(n, n) + 1);
        for i in 0..=n {
            for j in 0..=i {
                values.push(f(i, j));
            }
        }
        Self {
            grid,
            tag,
            values,
            a_value,
            strings: None,
        }
    }

    /// Samples channel 0 of `source` on its whole simplex.
    pub fn from_source(source: &dyn CorrelatorSource) -> Result<Self> {
        let grid = *source.grid();
        let n = grid.n_steps;
        let lines: Vec<Vec<Quad>> = (0..=n)
            .into_par_iter()
            .map(|k| {
                let mut out = vec![Vec::new()];
                source.line(k, &[(0, 0)], &mut out)?;
                Ok(out.pop().unwrap())
            })
            .collect::<Result<_>>()?;
        let mut values = vec![[Complex64::new(0.0, 0.0); 4]; packed(n, n) + 1];
        for (k, line) in lines.into_iter().enumerate() {
            for (m, q) in line.into_iter().enumerate() {
                let (i, j) = match source.traversal() {
                    Traversal::Columns => (k + m, k),
                    Traversal::Rows => (k, m),
                };
                values[packed(i, j)] = q;
            }
        }
        Ok(Self {
            grid,
            tag: source.tag(),
            values,
            a_value: source.a_value(),
            strings: source.fourth_order_strings(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn source_tag(&self) -> SourceTag {
        self.tag
    }

    pub fn with_tag(mut self, tag: SourceTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn with_strings(mut self, strings: Option<[Complex64; 5]>) -> Self {
        self.strings = strings;
        self
    }

    /// Values at `(t₁, t₂) = (grid[i], grid[j])`; `None` off the simplex.
    pub fn get(&self, i: usize, j: usize) -> Option<Quad> {
        if j > i || i > self.grid.n_steps {
            return None;
        }
        Some(self.values[packed(i, j)])
    }

    pub fn value(&self, i: usize, j: usize, ordering: Ordering) -> Option<Complex64> {
        self.get(i, j).map(|q| q[ordering.index()])
    }

    /// `max |OOA(t₂,t₁) − conj(AOO(t₁,t₂))|`; zero for Hermitian `Ô`, `Â`.
    pub fn hermiticity_deviation(&self) -> f64 {
        self.values
            .iter()
            .map(|q| (q[2] - q[3].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Writes `t1,t2,ordering_tag,re,im` rows, followed by the equal-time rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t1", "t2", "ordering_tag", "re", "im"])?;
        let n = self.grid.n_steps;
        let times: Vec<String> = self.grid.times().into_iter().map(fmt).collect();
        for i in 0..=n {
            for j in 0..=i {
                let q = self.values[packed(i, j)];
                for o in Ordering::ALL {
                    let v = q[o.index()];
                    w.write_record([
                        times[i].as_str(),
                        times[j].as_str(),
                        o.tag(),
                        &fmt(v.re),
                        &fmt(v.im),
                    ])?;
                }
            }
        }
        let t = times[n].as_str();
        w.write_record([t, t, A_TAG, &fmt(self.a_value.re), &fmt(self.a_value.im)])?;
        if let Some(s) = self.strings {
            for (tag, v) in STRING_TAGS.iter().zip(s) {
                w.write_record([t, t, tag, &fmt(v.re), &fmt(v.im)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a grid written by [`CorrelatorGrid::write_csv`] (or an external
    /// tool using the same columns).
    pub fn read_csv<R: Read>(reader: R, tag: SourceTag) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["t1", "t2", "ordering_tag", "re", "im"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Data(format!(
                "expected columns {expected:?}, found {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let parse = |s: &str, row: usize| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("row {row}: `{s}` is not a number")))
        };
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = k + 2;
            rows.push((
                parse(&rec[0], row)?,
                parse(&rec[1], row)?,
                rec[2].to_string(),
                Complex64::new(parse(&rec[3], row)?, parse(&rec[4], row)?),
            ));
        }
        let mut times: Vec<f64> = rows
            .iter()
            .filter(|r| Ordering::from_tag(&r.2).is_some())
            .flat_map(|r| [r.0, r.1])
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        if times.len() < 2 {
            return Err(Error::Data(
                "correlator file spans fewer than two grid times".into(),
            ));
        }
        let grid = TimeGrid::new(times[0], times[times.len() - 1], times.len() - 1)?;
        let n = grid.n_steps;
        let tol = 1e-9 * grid.span();
        let index = |t: f64| -> Result<usize> {
            let k = ((t - grid.t0) / grid.dt()).round();
            if k < 0.0 || k > n as f64 || (grid.time(k as usize) - t).abs() > tol {
                return Err(Error::Data(format!("time {t} is not on a uniform grid")));
            }
            Ok(k as usize)
        };
        let total = packed(n, n) + 1;
        let mut values = vec![[Complex64::new(0.0, 0.0); 4]; total];
        let mut seen = vec![0u8; total];
        let mut a_value = None;
        let mut strings = [None; 5];
        for (t1, t2, tag, v) in rows {
            if let Some(o) = Ordering::from_tag(&tag) {
                let (i, j) = (index(t1)?, index(t2)?);
                if j > i {
                    return Err(Error::Data(format!(
                        "row ({t1}, {t2}) lies off the simplex"
                    )));
                }
                values[packed(i, j)][o.index()] = v;
                seen[packed(i, j)] |= 1 << o.index();
            } else if tag == A_TAG {
                a_value = Some(v);
            } else if let Some(s) = STRING_TAGS.iter().position(|s| *s == tag) {
                strings[s] = Some(v);
            } else {
                return Err(Error::Data(format!("unknown ordering tag `{tag}`")));
            }
        }
        if let Some(missing) = seen.iter().position(|&b| b != 0b1111) {
            return Err(Error::Data(format!(
                "{} simplex entries incomplete (first at packed index {missing})",
                seen.iter().filter(|&&b| b != 0b1111).count()
            )));
        }
        let a_value = a_value.ok_or_else(|| Error::Data("missing the `A` row".into()))?;
        let strings = if strings.iter().all(Option::is_some) {
            Some(strings.map(Option::unwrap))
        } else {
            None
        };
        Ok(Self {
            grid,
            tag,
            values,
            a_value,
            strings,
        })
    }
}

impl CorrelatorSource for CorrelatorGrid {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn tag(&self) -> SourceTag {
        self.tag
    }

    fn n_channels(&self) -> usize {
        1
    }

    fn a_value(&self) -> Complex64 {
        self.a_value
    }

    fn fourth_order_strings(&self) -> Option<[Complex64; 5]> {
        self.strings
    }

    fn line(&self, k: usize, pairs: &[(usize, usize)], out: &mut [Vec<Quad>]) -> Result<()> {
        for (p, pair) in pairs.iter().enumerate() {
            if *pair != (0, 0) {
                return Err(Error::InvalidArgument(
                    "a correlator grid holds a single channel".into(),
                ));
            }
            out[p].clear();
            out[p].extend((k..=self.grid.n_steps).map(|i| self.values[packed(i, k)]));
        }
        Ok(())
    }
}
