//! Tabulated antenna gain patterns.
//!
//! File format (UTF-8, LF line endings):
//!
//! ```text
//! elev_deg,azim_deg,gain_dbi
//! -90,0,-12.5
//! -90,90,-12.1
//! ...
//! ```
//!
//! Rows are ordered elevation-major with strictly increasing azimuth inside
//! each elevation block; every block lists the same azimuths. A pattern that
//! does not depend on azimuth has a single azimuth per elevation. The single
//! row `*,*,0` is shorthand for an isotropic antenna.

use std::fs;
use std::path::Path;

use super::ChannelError;

pub const PATTERN_HEADER: &str = "elev_deg,azim_deg,gain_dbi";

#[derive(Debug, Clone, PartialEq)]
pub struct AntennaPattern {
    elevation_deg: Vec<f64>,
    azimuth_deg: Vec<f64>,
    /// Row-major over (elevation, azimuth).
    gain_dbi: Vec<f64>,
}

impl AntennaPattern {
    pub fn isotropic() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(gain_dbi: f64) -> Self {
        Self {
            elevation_deg: vec![0.0],
            azimuth_deg: vec![0.0],
            gain_dbi: vec![gain_dbi],
        }
    }

    /// Builds a pattern from grids and an elevation-major gain table.
    pub fn new(
        elevation_deg: Vec<f64>,
        azimuth_deg: Vec<f64>,
        gain_dbi: Vec<f64>,
    ) -> Result<Self, ChannelError> {
        let bad = |msg: &str| ChannelError::Pattern {
            line: 0,
            msg: msg.to_string(),
        };
        if elevation_deg.is_empty() || azimuth_deg.is_empty() {
            return Err(bad("empty grid"));
        }
        if gain_dbi.len() != elevation_deg.len() * azimuth_deg.len() {
            return Err(bad("gain table does not match grid size"));
        }
        if !strictly_increasing(&elevation_deg) || !strictly_increasing(&azimuth_deg) {
            return Err(ChannelError::UnsortedGrid { line: 0 });
        }
        if elevation_deg.iter().any(|e| !(-90.0..=90.0).contains(e)) {
            return Err(bad("elevation outside [-90, 90]"));
        }
        if azimuth_deg.iter().any(|a| !(0.0..360.0).contains(a)) {
            return Err(bad("azimuth outside [0, 360)"));
        }
        if gain_dbi.iter().any(|g| !g.is_finite()) {
            return Err(ChannelError::NonFiniteGain { line: 0 });
        }
        Ok(Self {
            elevation_deg,
            azimuth_deg,
            gain_dbi,
        })
    }

    /// A pattern that depends on elevation only.
    pub fn omni(elevation_deg: Vec<f64>, gain_dbi: Vec<f64>) -> Result<Self, ChannelError> {
        Self::new(elevation_deg, vec![0.0], gain_dbi)
    }

    pub fn elevation_grid(&self) -> &[f64] {
        &self.elevation_deg
    }

    pub fn azimuth_grid(&self) -> &[f64] {
        &self.azimuth_deg
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.gain_dbi[i * self.azimuth_deg.len() + j]
    }

    /// Bilinear gain lookup in dBi. Elevation is clamped to the grid and
    /// azimuth wraps around 360 degrees.
    pub fn gain_dbi(&self, elevation_deg: f64, azimuth_deg: f64) -> f64 {
        let (i0, i1, te) = bracket_clamped(&self.elevation_deg, elevation_deg);
        let (j0, j1, ta) = bracket_wrapped(&self.azimuth_deg, azimuth_deg);
        let lo = self.at(i0, j0) * (1.0 - ta) + self.at(i0, j1) * ta;
        let hi = self.at(i1, j0) * (1.0 - ta) + self.at(i1, j1) * ta;
        lo * (1.0 - te) + hi * te
    }

    pub fn parse(text: &str) -> Result<Self, ChannelError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, h)) if h.replace(' ', "") == PATTERN_HEADER => {}
            Some((line, _)) => {
                return Err(ChannelError::Pattern {
                    line,
                    msg: format!("expected header `{PATTERN_HEADER}`"),
                })
            }
            None => {
                return Err(ChannelError::Pattern {
                    line: 1,
                    msg: "empty pattern file".into(),
                })
            }
        }

        let rows: Vec<(usize, [&str; 3])> = lines
            .map(|(line, l)| {
                let f: Vec<&str> = l.split(',').map(str::trim).collect();
                match <[&str; 3]>::try_from(f) {
                    Ok(a) => Ok((line, a)),
                    Err(_) => Err(ChannelError::Pattern {
                        line,
                        msg: "expected 3 comma-separated fields".into(),
                    }),
                }
            })
            .collect::<Result<_, _>>()?;

        if let [(line, [e, a, g])] = rows.as_slice() {
            if *e == "*" && *a == "*" {
                let gain = parse_num(g, *line)?;
                if !gain.is_finite() {
                    return Err(ChannelError::NonFiniteGain { line: *line });
                }
                return Ok(Self::constant(gain));
            }
        }
        if rows.is_empty() {
            return Err(ChannelError::Pattern {
                line: 2,
                msg: "no pattern rows".into(),
            });
        }

        let mut elevation: Vec<f64> = Vec::new();
        let mut azimuth: Vec<f64> = Vec::new();
        let mut gains = Vec::with_capacity(rows.len());
        let mut block_pos = 0usize;
        for &(line, [e, a, g]) in &rows {
            let (e, a, g) = (parse_num(e, line)?, parse_num(a, line)?, parse_num(g, line)?);
            if !g.is_finite() {
                return Err(ChannelError::NonFiniteGain { line });
            }
            if !(-90.0..=90.0).contains(&e) || !(0.0..360.0).contains(&a) {
                return Err(ChannelError::Pattern {
                    line,
                    msg: "angle out of range".into(),
                });
            }
            match elevation.last() {
                Some(&last) if e == last => block_pos += 1,
                Some(&last) if e < last => return Err(ChannelError::UnsortedGrid { line }),
                Some(_) => {
                    if block_pos + 1 != azimuth.len() {
                        return Err(ChannelError::Pattern {
                            line,
                            msg: "elevation block has a different azimuth count".into(),
                        });
                    }
                    elevation.push(e);
                    block_pos = 0;
                }
                None => elevation.push(e),
            }
            if elevation.len() == 1 {
                if azimuth.last().is_some_and(|&last| a <= last) {
                    return Err(ChannelError::UnsortedGrid { line });
                }
                azimuth.push(a);
            } else if azimuth.get(block_pos) != Some(&a) {
                return Err(if block_pos > 0 && a <= azimuth[block_pos - 1] {
                    ChannelError::UnsortedGrid { line }
                } else {
                    ChannelError::Pattern {
                        line,
                        msg: "azimuth grid differs between elevation blocks".into(),
                    }
                });
            }
            gains.push(g);
        }
        if gains.len() != elevation.len() * azimuth.len() {
            return Err(ChannelError::Pattern {
                line: rows.last().map_or(0, |r| r.0),
                msg: "last elevation block is incomplete".into(),
            });
        }
        Self::new(elevation, azimuth, gains)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(PATTERN_HEADER);
        out.push('\n');
        if self.gain_dbi.len() == 1 {
            out.push_str(&format!("*,*,{}\n", self.gain_dbi[0]));
            return out;
        }
        for (i, e) in self.elevation_deg.iter().enumerate() {
            for (j, a) in self.azimuth_deg.iter().enumerate() {
                out.push_str(&format!("{e},{a},{}\n", self.at(i, j)));
            }
        }
        out
    }
}

pub fn load_antenna_pattern(path: impl AsRef<Path>) -> Result<AntennaPattern, ChannelError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| ChannelError::Io(e.to_string()))?;
    AntennaPattern::parse(&text)
}

fn parse_num(s: &str, line: usize) -> Result<f64, ChannelError> {
    s.parse::<f64>().map_err(|_| ChannelError::Pattern {
        line,
        msg: format!("cannot parse `{s}` as a number"),
    })
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

fn bracket_clamped(grid: &[f64], x: f64) -> (usize, usize, f64) {
    let n = grid.len();
    if n == 1 || x <= grid[0] {
        return (0, 0, 0.0);
    }
    if x >= grid[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = grid.partition_point(|&g| g <= x);
    let lo = hi - 1;
    (lo, hi, (x - grid[lo]) / (grid[hi] - grid[lo]))
}

fn bracket_wrapped(grid: &[f64], x: f64) -> (usize, usize, f64) {
    let n = grid.len();
    if n == 1 {
        return (0, 0, 0.0);
    }
    let x = x.rem_euclid(360.0);
    let hi = grid.partition_point(|&g| g <= x);
    if hi == 0 || hi == n {
        // Between the last node and the first node + 360.
        let lo_val = grid[n - 1];
        let span = grid[0] + 360.0 - lo_val;
        let offset = if hi == 0 { x + 360.0 - lo_val } else { x - lo_val };
        return (n - 1, 0, offset / span);
    }
    let lo = hi - 1;
    (lo, hi, (x - grid[lo]) / (grid[hi] - grid[lo]))
}
