//! Modified nodal analysis: `C ẋ = −G x + B u`.
//!
//! Unknowns are the non-ground node voltages followed by one branch current
//! per voltage source and then one per inductor. Branch currents flow from
//! `n+` through the element to `n−`. A current source `I n+ n− ...` pushes its
//! current out of `n+` and into `n−` through the external circuit, i.e. it
//! injects into `n−`.

use serde::{Deserialize, Serialize};

use super::parse::{ElementKind, ElementValue, Netlist};
use super::waveform::{eval_sources, Waveform};
use super::NetlistError;
use crate::numkit::{lu_factorize, LuFactors, SparseMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StampWarning {
    /// Node has no DC path to ground through resistors, inductors or voltage sources.
    FloatingNode { node: String },
}

impl std::fmt::Display for StampWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StampWarning::FloatingNode { node } => {
                write!(f, "node `{node}` has no DC path to ground")
            }
        }
    }
}

/// The MNA triple plus the source waveforms and unknown naming.
#[derive(Debug, Clone)]
pub struct CircuitSystem {
    pub c: SparseMatrix,
    pub g: SparseMatrix,
    /// `n × s` input matrix; `None` when the circuit has no sources.
    pub b: Option<SparseMatrix>,
    pub sources: Vec<Waveform>,
    pub source_names: Vec<String>,
    /// `v(node)` for node voltages, then `i(element)` for branch currents.
    pub unknown_names: Vec<String>,
    pub num_nodes: usize,
    pub warnings: Vec<StampWarning>,
}

impl CircuitSystem {
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// `B·u` for a given input vector.
    pub fn input_vector(&self, u: &[f64]) -> Vec<f64> {
        match &self.b {
            Some(b) => b.mul_vec(u),
            None => vec![0.0; self.dim()],
        }
    }

    /// `B·u(t)` and `B·u'(t⁺)`.
    pub fn excitation(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let (u, du) = eval_sources(&self.sources, t);
        (self.input_vector(&u), self.input_vector(&du))
    }

    /// Same matrices, different source waveforms (one per column of `B`).
    pub fn with_sources(&self, sources: Vec<Waveform>) -> Self {
        assert_eq!(
            sources.len(),
            self.sources.len(),
            "one waveform per input column"
        );
        Self {
            sources,
            ..self.clone()
        }
    }

    /// True when every waveform is identically zero.
    pub fn is_unforced(&self) -> bool {
        self.sources.iter().all(|w| match w {
            Waveform::Dc(v) => *v == 0.0,
            Waveform::Pulse(p) => p.v1 == 0.0 && p.v2 == 0.0,
            Waveform::Pwl(pts) => pts.iter().all(|&(_, v)| v == 0.0),
        })
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Stamp the MNA matrices for a parsed netlist.
pub fn stamp_mna(nl: &Netlist) -> Result<CircuitSystem, NetlistError> {
    let nodes = nl.num_nodes();
    let vsrc: Vec<usize> = (0..nl.elements.len())
        .filter(|&i| nl.elements[i].kind == ElementKind::VoltageSource)
        .collect();
    let inds: Vec<usize> = (0..nl.elements.len())
        .filter(|&i| nl.elements[i].kind == ElementKind::Inductor)
        .collect();
    let n = nodes + vsrc.len() + inds.len();
    if n == 0 {
        return Err(NetlistError::EmptyCircuit);
    }

    let mut branch = vec![usize::MAX; nl.elements.len()];
    for (k, &e) in vsrc.iter().chain(&inds).enumerate() {
        branch[e] = nodes + k;
    }

    let mut c = Vec::new();
    let mut g = Vec::new();
    let mut b = Vec::new();
    let mut source_names = Vec::new();
    // node id -> unknown index (ground has none)
    let idx = |node: usize| node.checked_sub(1);

    let stamp_pair = |m: &mut Vec<(usize, usize, f64)>, p: usize, q: usize, v: f64| {
        if let Some(i) = idx(p) {
            m.push((i, i, v));
        }
        if let Some(j) = idx(q) {
            m.push((j, j, v));
        }
        if let (Some(i), Some(j)) = (idx(p), idx(q)) {
            m.push((i, j, -v));
            m.push((j, i, -v));
        }
    };

    let mut sources = Vec::new();
    for (ei, e) in nl.elements.iter().enumerate() {
        let (p, q) = (e.pos, e.neg);
        match (e.kind, &e.value) {
            (ElementKind::Resistor, ElementValue::Passive(r)) => stamp_pair(&mut g, p, q, 1.0 / r),
            (ElementKind::Capacitor, ElementValue::Passive(cap)) => stamp_pair(&mut c, p, q, *cap),
            (ElementKind::Inductor, ElementValue::Passive(l)) => {
                // KCL: current leaves n+ and enters n−; branch: L di/dt = v+ − v−.
                let k = branch[ei];
                if let Some(i) = idx(p) {
                    g.push((i, k, 1.0));
                    g.push((k, i, -1.0));
                }
                if let Some(j) = idx(q) {
                    g.push((j, k, -1.0));
                    g.push((k, j, 1.0));
                }
                c.push((k, k, *l));
            }
            (ElementKind::VoltageSource, ElementValue::Source(w)) => {
                // Algebraic row: v+ − v− = u.
                let k = branch[ei];
                if let Some(i) = idx(p) {
                    g.push((i, k, 1.0));
                    g.push((k, i, 1.0));
                }
                if let Some(j) = idx(q) {
                    g.push((j, k, -1.0));
                    g.push((k, j, -1.0));
                }
                b.push((k, sources.len(), 1.0));
                sources.push(nl.waveforms[*w].clone());
                source_names.push(e.name.clone());
            }
            (ElementKind::CurrentSource, ElementValue::Source(w)) => {
                let col = sources.len();
                if let Some(i) = idx(p) {
                    b.push((i, col, -1.0));
                }
                if let Some(j) = idx(q) {
                    b.push((j, col, 1.0));
                }
                sources.push(nl.waveforms[*w].clone());
                source_names.push(e.name.clone());
            }
            _ => unreachable!("parser pairs element kinds with matching values"),
        }
    }

    let c = SparseMatrix::from_triplets(n, n, &c)?;
    let g = SparseMatrix::from_triplets(n, n, &g)?;
    let b = if sources.is_empty() {
        None
    } else {
        Some(SparseMatrix::from_triplets(n, sources.len(), &b)?)
    };

    let mut unknown_names: Vec<String> = nl.node_names[1..]
        .iter()
        .map(|s| format!("v({s})"))
        .collect();
    for &e in vsrc.iter().chain(&inds) {
        unknown_names.push(format!("i({})", nl.elements[e].name.to_ascii_lowercase()));
    }

    // Floating-node check: union nodes joined by DC-conducting elements.
    let mut parent: Vec<usize> = (0..=nodes).collect();
    for e in &nl.elements {
        if matches!(
            e.kind,
            ElementKind::Resistor | ElementKind::Inductor | ElementKind::VoltageSource
        ) {
            let (a, b) = (find(&mut parent, e.pos), find(&mut parent, e.neg));
            parent[a] = b;
        }
    }
    let ground = find(&mut parent, 0);
    let warnings = (1..=nodes)
        .filter(|&k| find(&mut parent, k) != ground)
        .map(|k| StampWarning::FloatingNode {
            node: nl.node_names[k].clone(),
        })
        .collect();

    Ok(CircuitSystem {
        c,
        g,
        b,
        sources,
        source_names,
        unknown_names,
        num_nodes: nodes,
        warnings,
    })
}

/// Operating point at `t`: solve `G x = B u(t)` (the steady state of `ẋ = 0`).
pub fn dc_analysis_at(sys: &CircuitSystem, t: f64) -> Result<Vec<f64>, NetlistError> {
    let factors = lu_factorize(&sys.g).map_err(NetlistError::NoDcOperatingPoint)?;
    dc_solve(sys, &factors, t)
}

/// Operating point at `t = 0`.
pub fn dc_analysis(sys: &CircuitSystem) -> Result<Vec<f64>, NetlistError> {
    dc_analysis_at(sys, 0.0)
}

/// Operating point using existing factors of `G`; skips the solve for an
/// all-zero right-hand side.
pub fn dc_solve(
    sys: &CircuitSystem,
    g_factors: &LuFactors,
    t: f64,
) -> Result<Vec<f64>, NetlistError> {
    let (bu, _) = sys.excitation(t);
    if bu.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; sys.dim()]);
    }
    Ok(g_factors.solve(&bu)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_netlist;
    use crate::numkit::DenseMatrix;

    fn system(text: &str) -> CircuitSystem {
        stamp_mna(&parse_netlist(text).unwrap()).unwrap()
    }

    #[test]
    fn single_resistor() {
        let s = system("R1 1 0 2");
        assert_eq!(s.g.to_dense(), vec![vec![0.5]]);
        assert_eq!(s.c.to_dense(), vec![vec![0.0]]);
        assert!(s.b.is_none());
    }

    #[test]
    fn parallel_rc_with_injection() {
        let s = system("R1 1 0 1\nC1 1 0 1\nI1 0 1 DC 1");
        assert_eq!(s.g.to_dense(), vec![vec![1.0]]);
        assert_eq!(s.c.to_dense(), vec![vec![1.0]]);
        assert_eq!(s.b.as_ref().unwrap().to_dense(), vec![vec![1.0]]);
        assert_eq!(dc_analysis(&s).unwrap(), vec![1.0]);
    }

    #[test]
    fn voltage_source_rc_hand_derivation() {
        // unknowns: v(1), v(2), i(v1)
        let s = system("V1 1 0 DC 1\nR1 1 2 2\nC1 2 0 3");
        let g = vec![
            vec![0.5, -0.5, 1.0],
            vec![-0.5, 0.5, 0.0],
            vec![1.0, 0.0, 0.0],
        ];
        let c = vec![vec![0.0; 3], vec![0.0, 3.0, 0.0], vec![0.0; 3]];
        assert_eq!(s.g.to_dense(), g);
        assert_eq!(s.c.to_dense(), c);
        assert_eq!(
            s.b.as_ref().unwrap().to_dense(),
            vec![vec![0.0], vec![0.0], vec![1.0]]
        );
        assert_eq!(s.unknown_names, vec!["v(1)", "v(2)", "i(v1)"]);
        let x = dc_analysis(&s).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15 && x[2].abs() < 1e-15);
    }

    #[test]
    fn inductor_branch() {
        // V1 drives R then L to ground; DC: i = 1/2.
        let s = system("V1 1 0 DC 1\nR1 1 2 2\nL1 2 0 1u");
        assert_eq!(s.dim(), 4);
        assert_eq!(s.c.get(3, 3), 1e-6);
        let x = dc_analysis(&s).unwrap();
        assert!((x[3] - 0.5).abs() < 1e-14, "{x:?}");
        assert!(x[1].abs() < 1e-14);
        // source current flows out of n+ into the circuit: branch current is −0.5
        assert!((x[2] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_sources_give_zero_dc() {
        let s = system("R1 1 0 1\nR2 1 2 1\nC1 2 0 1\nI1 0 2 DC 0");
        assert_eq!(dc_analysis(&s).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn resistive_ladder_matches_dense_solve() {
        let mut text = String::from("I1 0 1 DC 2m\n");
        for k in 1..=10 {
            text.push_str(&format!("Rs{k} {k} {} {}\n", k + 1, 10.0 * k as f64));
            text.push_str(&format!("Rg{k} {k} 0 {}\n", 1000.0 + k as f64));
        }
        let s = system(&text);
        let x = dc_analysis(&s).unwrap();
        let g = DenseMatrix::from_rows(&s.g.to_dense());
        let rhs = s.input_vector(&[2e-3]);
        let oracle = g.lu().unwrap().solve(&rhs);
        for (a, b) in x.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn floating_node_is_a_warning_and_dc_fails() {
        let s = system("R1 1 0 1\nC1 1 2 1\nC2 2 0 1");
        assert_eq!(
            s.warnings,
            vec![StampWarning::FloatingNode { node: "2".into() }]
        );
        assert!(matches!(
            dc_analysis(&s),
            Err(NetlistError::NoDcOperatingPoint(_))
        ));
    }

    #[test]
    fn rc_blocks_are_symmetric_and_dominant() {
        let s =
            system("R1 1 2 1k\nR2 2 3 2k\nR3 3 0 3k\nR4 1 0 5k\nC1 1 0 1p\nC2 1 2 2p\nC3 3 0 1p");
        assert!(s.g.is_symmetric(0.0));
        assert!(s.c.is_symmetric(0.0));
        let g = s.g.to_dense();
        for (i, row) in g.iter().enumerate() {
            let off: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v.abs())
                .sum();
            assert!(row[i] >= off);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Relabelling nodes permutes rows and columns of C and G identically.
            #[test]
            fn stamping_is_permutation_consistent(
                edges in proptest::collection::vec((0usize..6, 0usize..6, 1.0f64..10.0, 0.1f64..5.0), 4..12),
                perm in Just((1..=5usize).collect::<Vec<_>>()).prop_shuffle(),
            ) {
                let label = |k: usize, relabel: bool| if k == 0 || !relabel { k } else { perm[k - 1] };
                let build = |relabel: bool| {
                    // A declaration line fixes node numbering to the labels 1..=5.
                    let mut t = String::new();
                    for k in 1..=5 {
                        t.push_str(&format!("Rd{k} {k} 0 1meg\n"));
                    }
                    for (i, &(a, b, r, c)) in edges.iter().enumerate() {
                        if a == b { continue; }
                        t.push_str(&format!("R{i} {} {} {r}\nC{i} {} {} {c}\n",
                            label(a, relabel), label(b, relabel), label(a, relabel), label(b, relabel)));
                    }
                    system(&t)
                };
                let s0 = build(false);
                let s1 = build(true);
                let name0: Vec<usize> = s0.unknown_names.iter().map(|n| n[2..n.len()-1].parse().unwrap()).collect();
                let name1: Vec<usize> = s1.unknown_names.iter().map(|n| n[2..n.len()-1].parse().unwrap()).collect();
                let pos1 = |label_: usize| name1.iter().position(|&x| x == label_).unwrap();
                for i in 0..5 {
                    for j in 0..5 {
                        let (ii, jj) = (pos1(label(name0[i], true)), pos1(label(name0[j], true)));
                        prop_assert!((s0.g.get(i, j) - s1.g.get(ii, jj)).abs() <= 1e-12 * s0.g.max_abs());
                        prop_assert!((s0.c.get(i, j) - s1.c.get(ii, jj)).abs() <= 1e-12 * s0.c.max_abs());
                    }
                }
            }
        }
    }
}
