//! Plain-text case format.
//!
//! A case file is a sequence of lines; `#` starts a comment. Two directives
//! may appear before the tables:
//!
//! ```text
//! BASE_MVA 100
//! UNITS MW        # or PU; default MW
//! ```
//!
//! followed by three sections, each introduced by a line holding only its
//! name, with whitespace-separated columns:
//!
//! ```text
//! BUS     id type Pd Qd Gs Bs Vmin Vmax       (type: slack | pv | pq)
//! GEN     bus Pmin Pmax Qmin Qmax Vset
//! BRANCH  from to r x b tap Smax
//! ```
//!
//! With `UNITS MW`, powers (`Pd Qd Gs Bs Pmin Pmax Qmin Qmax Smax`) are in
//! MW / MVAr / MVA and divided by `BASE_MVA`; with `UNITS PU` they are read
//! as given. Voltages, impedances and taps are always per-unit. A tap of 0
//! means a plain line (ratio 1). `Smax` 0 means unlimited. Bus ids are
//! arbitrary positive integers; buses are indexed in file order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::grid::{BranchSpec, BusSpec, BusType, GenSpec, GridCase};
use crate::{Error, Result};

pub const CASE6WW: &str = include_str!("../cases/case6ww.txt");
pub const CASE24_RTS: &str = include_str!("../cases/case24_rts.txt");

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Preamble,
    Bus,
    Gen,
    Branch,
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn numbers<const N: usize>(fields: &[&str], line: usize) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (slot, tok) in out.iter_mut().zip(fields) {
        *slot = tok
            .parse::<f64>()
            .map_err(|_| err(line, format!("not a number: {tok:?}")))?;
        if !slot.is_finite() {
            return Err(err(line, format!("non-finite value {tok:?}")));
        }
    }
    Ok(out)
}

fn bus_id(tok: &str, line: usize) -> Result<u32> {
    tok.parse::<u32>()
        .map_err(|_| err(line, format!("bad bus id {tok:?}")))
}

struct RawGen {
    bus: u32,
    line: usize,
    vals: [f64; 5],
}

struct RawBranch {
    from: u32,
    to: u32,
    line: usize,
    vals: [f64; 5],
}

/// Parse case text into a validated [`GridCase`].
pub fn parse_case_str(text: &str) -> Result<GridCase> {
    let mut section = Section::Preamble;
    let mut base_mva: Option<f64> = None;
    let mut per_unit = false;
    let mut buses: Vec<BusSpec> = Vec::new();
    let mut gens: Vec<RawGen> = Vec::new();
    let mut branches: Vec<RawBranch> = Vec::new();

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let key = fields[0].to_ascii_uppercase();
        match (key.as_str(), fields.len()) {
            ("BUS", 1) => {
                section = Section::Bus;
                continue;
            }
            ("GEN", 1) => {
                section = Section::Gen;
                continue;
            }
            ("BRANCH", 1) => {
                section = Section::Branch;
                continue;
            }
            ("BASE_MVA", 2) if section == Section::Preamble => {
                let [v] = numbers::<1>(&fields[1..], line)?;
                base_mva = Some(v);
                continue;
            }
            ("UNITS", 2) if section == Section::Preamble => {
                per_unit = match fields[1].to_ascii_uppercase().as_str() {
                    "MW" => false,
                    "PU" => true,
                    other => return Err(err(line, format!("unknown units {other:?}"))),
                };
                continue;
            }
            _ => {}
        }
        let expect = |n: usize| -> Result<()> {
            if fields.len() == n {
                Ok(())
            } else {
                Err(err(line, format!("expected {n} columns, found {}", fields.len())))
            }
        };
        match section {
            Section::Preamble => {
                return Err(err(line, format!("unknown field {:?}", fields[0])));
            }
            Section::Bus => {
                expect(8)?;
                let id = bus_id(fields[0], line)?;
                let bus_type = match fields[1].to_ascii_lowercase().as_str() {
                    "slack" => BusType::Slack,
                    "pv" => BusType::Pv,
                    "pq" => BusType::Pq,
                    other => return Err(err(line, format!("unknown bus type {other:?}"))),
                };
                let [pd, qd, gs, bs, vmin, vmax] = numbers::<6>(&fields[2..], line)?;
                buses.push(BusSpec::new(id, bus_type, pd, qd, vmin, vmax).with_shunt(gs, bs));
            }
            Section::Gen => {
                expect(6)?;
                gens.push(RawGen {
                    bus: bus_id(fields[0], line)?,
                    line,
                    vals: numbers::<5>(&fields[1..], line)?,
                });
            }
            Section::Branch => {
                expect(7)?;
                branches.push(RawBranch {
                    from: bus_id(fields[0], line)?,
                    to: bus_id(fields[1], line)?,
                    line,
                    vals: numbers::<5>(&fields[2..], line)?,
                });
            }
        }
    }

    let base_mva = base_mva.ok_or_else(|| err(0, "missing BASE_MVA"))?;
    if !(base_mva > 0.0) {
        return Err(Error::Validation("BASE_MVA must be positive".into()));
    }
    let base = if per_unit { 1.0 } else { base_mva };
    for b in &mut buses {
        b.pd /= base;
        b.qd /= base;
        b.shunt_g /= base;
        b.shunt_b /= base;
    }
    let index = |id: u32, line: usize| -> Result<usize> {
        buses
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| Error::Validation(format!("line {line}: unknown bus id {id}")))
    };
    let gens = gens
        .iter()
        .map(|g| {
            let [pmin, pmax, qmin, qmax, vset] = g.vals;
            Ok(GenSpec {
                bus: index(g.bus, g.line)?,
                pmin: pmin / base,
                pmax: pmax / base,
                qmin: qmin / base,
                qmax: qmax / base,
                vset,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let branches = branches
        .iter()
        .map(|b| {
            let [r, x, bc, tap, smax] = b.vals;
            Ok(BranchSpec {
                from: index(b.from, b.line)?,
                to: index(b.to, b.line)?,
                r,
                x,
                b_charging: bc,
                tap: if tap == 0.0 { 1.0 } else { tap },
                smax: smax / base,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GridCase::new(base_mva, buses, gens, branches)
}

/// Serialize a case in per-unit form. Values use the shortest decimal that
/// reads back to the same `f64`, so parsing the output reproduces the case
/// exactly.
pub fn write_case_str(grid: &GridCase) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "BASE_MVA {}", grid.base_mva);
    s.push_str("UNITS PU\n\nBUS\n# id type Pd Qd Gs Bs Vmin Vmax\n");
    for b in &grid.buses {
        let t = match b.bus_type {
            BusType::Slack => "slack",
            BusType::Pv => "pv",
            BusType::Pq => "pq",
        };
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            b.id, t, b.pd, b.qd, b.shunt_g, b.shunt_b, b.vmin, b.vmax
        );
    }
    s.push_str("\nGEN\n# bus Pmin Pmax Qmin Qmax Vset\n");
    for g in &grid.gens {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            grid.buses[g.bus].id, g.pmin, g.pmax, g.qmin, g.qmax, g.vset
        );
    }
    s.push_str("\nBRANCH\n# from to r x b tap Smax\n");
    for br in &grid.branches {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {}",
            grid.buses[br.from].id,
            grid.buses[br.to].id,
            br.r,
            br.x,
            br.b_charging,
            br.tap,
            br.smax
        );
    }
    s
}

/// Bundled case by name (`case6ww`, `case24_rts`).
pub fn bundled(name: &str) -> Option<GridCase> {
    let text = match name {
        "case6ww" => CASE6WW,
        "case24_rts" => CASE24_RTS,
        _ => return None,
    };
    parse_case_str(text).ok()
}

pub fn bundled_names() -> [&'static str; 2] {
    ["case6ww", "case24_rts"]
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_cases_parse() {
        let g6 = parse_case_str(CASE6WW).unwrap();
        assert_eq!(g6.n(), 6);
        assert_eq!(g6.branches.len(), 11);
        assert_eq!(g6.zero_injection_buses().count(), 0);
        let g24 = parse_case_str(CASE24_RTS).unwrap();
        assert_eq!(g24.n(), 24);
        assert_eq!(g24.branches.len(), 38);
        let zi: Vec<u32> = g24.zero_injection_buses().map(|i| g24.buses[i].id).collect();
        assert_eq!(zi, alloc::vec![11, 12, 17, 24]);
    }

    #[test]
    fn mw_scaled_to_per_unit() {
        let g = parse_case_str(CASE6WW).unwrap();
        assert_eq!(g.buses[3].pd, 0.7);
        assert_eq!(g.gens[1].pmax, 1.5);
        assert_eq!(g.branches[0].smax, 0.4);
    }

    #[test]
    fn round_trip_is_exact() {
        for text in [CASE6WW, CASE24_RTS] {
            let g = parse_case_str(text).unwrap();
            let again = parse_case_str(&write_case_str(&g)).unwrap();
            assert_eq!(g, again);
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let bad = "BASE_MVA 100\nBUS\n1 slack 0 0 0 0 0.9\n";
        assert!(matches!(parse_case_str(bad), Err(Error::Parse { line: 3, .. })));
        let unknown = "BASE_MVA 100\nFOO 1\n";
        assert!(matches!(parse_case_str(unknown), Err(Error::Parse { line: 2, .. })));
        let two_slack = "BASE_MVA 100\nBUS\n1 slack 0 0 0 0 0.9 1.1\n2 slack 0 0 0 0 0.9 1.1\n\
                         GEN\n1 0 1 -1 1 1\n2 0 1 -1 1 1\nBRANCH\n1 2 0 0.1 0 1 0\n";
        assert!(matches!(parse_case_str(two_slack), Err(Error::Validation(_))));
    }
}
