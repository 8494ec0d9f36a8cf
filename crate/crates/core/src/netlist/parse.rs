//! Line-oriented SPICE-subset parser.
//!
//! ```text
//! * comment
//! R<name> n+ n- <value>
//! C<name> n+ n- <value>
//! L<name> n+ n- <value>
//! I<name> n+ n- DC <value> | PULSE(v1 v2 td tr tf tw tp) | PWL(t1 v1 t2 v2 ...)
//! V<name> n+ n- DC <value> | PULSE(...) | PWL(...)
//! .TRAN <tstart> <tstop>
//! .END
//! ```
//!
//! Everything is case-insensitive. A line starting with `+` continues the
//! previous line. Node `0` (or `gnd`) is ground.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::units::parse_value;
use super::waveform::{Pulse, Waveform};
use super::NetlistError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    Resistor,
    Capacitor,
    Inductor,
    CurrentSource,
    VoltageSource,
}

impl ElementKind {
    pub fn is_source(self) -> bool {
        matches!(
            self,
            ElementKind::CurrentSource | ElementKind::VoltageSource
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ElementValue {
    /// Ohms, farads or henries.
    Passive(f64),
    /// Index into [`Netlist::waveforms`].
    Source(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub kind: ElementKind,
    /// Name as written (original case), e.g. `R1`.
    pub name: String,
    /// Node ids; 0 is ground.
    pub pos: usize,
    pub neg: usize,
    pub value: ElementValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranDirective {
    pub t_start: f64,
    pub t_stop: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Netlist {
    pub elements: Vec<Element>,
    /// Source waveforms in order of appearance; sources refer to them by index.
    pub waveforms: Vec<Waveform>,
    /// `node_names[k]` is the name of node id `k`; entry 0 is ground.
    pub node_names: Vec<String>,
    pub tran: Option<TranDirective>,
}

impl Netlist {
    pub fn num_nodes(&self) -> usize {
        self.node_names.len() - 1
    }
}

fn syntax(line: usize, message: impl Into<String>) -> NetlistError {
    NetlistError::Syntax {
        line,
        message: message.into(),
    }
}

fn valid_node_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || "_.:[]<>#$".contains(c))
}

/// Joins continuation lines and strips comments; yields `(line number, text)`.
fn logical_lines(text: &str) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find(';') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('+') {
            if let Some(last) = out.last_mut() {
                last.1.push(' ');
                last.1.push_str(rest);
                continue;
            }
        }
        out.push((line_no, trimmed.to_string()));
    }
    out
}

fn tokenize(line: &str) -> Vec<String> {
    line.replace(['(', ')', ',', '='], " ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn number(line: usize, tok: &str, what: &str) -> Result<f64, NetlistError> {
    parse_value(tok).ok_or_else(|| syntax(line, format!("expected {what}, found `{tok}`")))
}

fn parse_waveform(line: usize, toks: &[String]) -> Result<Waveform, NetlistError> {
    let Some(head) = toks.first() else {
        return Err(syntax(line, "missing source value"));
    };
    let key = head.to_ascii_lowercase();
    let nums = |ts: &[String]| -> Result<Vec<f64>, NetlistError> {
        ts.iter().map(|t| number(line, t, "a number")).collect()
    };
    let wf = match key.as_str() {
        "dc" => {
            let v = nums(&toks[1..])?;
            if v.len() != 1 {
                return Err(syntax(line, "DC takes exactly one value"));
            }
            Waveform::Dc(v[0])
        }
        "pulse" => {
            let v = nums(&toks[1..])?;
            if v.len() != 7 {
                return Err(syntax(
                    line,
                    format!(
                        "PULSE takes 7 values (v1 v2 td tr tf tw tp), found {}",
                        v.len()
                    ),
                ));
            }
            Waveform::Pulse(Pulse {
                v1: v[0],
                v2: v[1],
                delay: v[2],
                rise: v[3],
                fall: v[4],
                width: v[5],
                period: v[6],
            })
        }
        "pwl" => {
            let v = nums(&toks[1..])?;
            if v.is_empty() || v.len() % 2 != 0 {
                return Err(syntax(line, "PWL takes an even, non-zero number of values"));
            }
            Waveform::Pwl(v.chunks(2).map(|c| (c[0], c[1])).collect())
        }
        _ => {
            // A bare value is a DC level.
            if toks.len() == 1 {
                Waveform::Dc(number(line, head, "a source value")?)
            } else {
                return Err(syntax(
                    line,
                    format!("unknown source specification `{head}`"),
                ));
            }
        }
    };
    wf.validate().map_err(|e| syntax(line, e.to_string()))?;
    Ok(wf)
}

/// Parse netlist text into elements, waveforms and directives.
pub fn parse_netlist(text: &str) -> Result<Netlist, NetlistError> {
    let mut nl = Netlist {
        node_names: vec!["0".to_string()],
        ..Default::default()
    };
    let mut node_ids: HashMap<String, usize> =
        HashMap::from([("0".to_string(), 0), ("gnd".to_string(), 0)]);
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (line, text) in logical_lines(text) {
        let toks = tokenize(&text);
        let head = toks[0].to_ascii_lowercase();
        if let Some(directive) = head.strip_prefix('.') {
            match directive {
                "end" => break,
                "tran" => {
                    if toks.len() != 3 {
                        return Err(syntax(line, ".TRAN takes <tstart> <tstop>"));
                    }
                    let t_start = number(line, &toks[1], "a start time")?;
                    let t_stop = number(line, &toks[2], "a stop time")?;
                    if !(t_start >= 0.0 && t_stop > t_start) {
                        return Err(syntax(line, ".TRAN needs 0 <= tstart < tstop"));
                    }
                    nl.tran = Some(TranDirective { t_start, t_stop });
                }
                other => return Err(syntax(line, format!("unsupported directive `.{other}`"))),
            }
            continue;
        }

        let kind = match head.chars().next() {
            Some('r') => ElementKind::Resistor,
            Some('c') => ElementKind::Capacitor,
            Some('l') => ElementKind::Inductor,
            Some('i') => ElementKind::CurrentSource,
            Some('v') => ElementKind::VoltageSource,
            _ => return Err(syntax(line, format!("unknown element `{}`", toks[0]))),
        };
        if toks.len() < 4 {
            return Err(syntax(
                line,
                format!("element `{}` needs two nodes and a value", toks[0]),
            ));
        }
        if let Some(&first) = seen.get(&head) {
            return Err(NetlistError::DuplicateElement {
                name: toks[0].clone(),
                line,
                first_line: first,
            });
        }
        seen.insert(head.clone(), line);

        let mut node = |tok: &str| -> Result<usize, NetlistError> {
            let key = tok.to_ascii_lowercase();
            if !valid_node_name(&key) {
                return Err(NetlistError::InvalidNode {
                    node: tok.to_string(),
                    line,
                });
            }
            let next = nl.node_names.len();
            let id = *node_ids.entry(key.clone()).or_insert(next);
            if id == next {
                nl.node_names.push(key);
            }
            Ok(id)
        };
        let pos = node(&toks[1])?;
        let neg = node(&toks[2])?;

        let value = if kind.is_source() {
            let wf = parse_waveform(line, &toks[3..])?;
            nl.waveforms.push(wf);
            ElementValue::Source(nl.waveforms.len() - 1)
        } else {
            if toks.len() != 4 {
                return Err(syntax(
                    line,
                    format!("element `{}` takes a single value", toks[0]),
                ));
            }
            let v = number(line, &toks[3], "an element value")?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(syntax(
                    line,
                    format!("element `{}` needs a positive value", toks[0]),
                ));
            }
            ElementValue::Passive(v)
        };
        nl.elements.push(Element {
            kind,
            name: toks[0].clone(),
            pos,
            neg,
            value,
        });
    }
    Ok(nl)
}
