//! Finite truncations, exact and float value iteration, and the ε-optimal
//! MD pipeline for the liminf point-payoff objective.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::io;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::wilson_interval;
use crate::label::{parse_rational, StateRef};
use crate::mdp::{rat_to_f64, Branch, ChoiceList, LazyMdp, MdpError, Prob, Reward, SuccessorDist, Successors, Support};
use crate::montecarlo::{draw, episode_seed};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("frontier exceeded {cap} states at depth {depth}")]
    BranchingExplosion { cap: usize, depth: usize },
    #[error("state {0} branches infinitely")]
    InfiniteBranching(String),
    #[error("value iteration did not converge in {0} iterations")]
    NonConvergence(usize),
    #[error("exact mode needs an acyclic graph outside absorbing states; cycle through {0}")]
    Cyclic(String),
    #[error("certificate failed: attainment {attainment} + 3ε < value {value}")]
    BudgetNotMet { value: String, attainment: String },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("random state {0} has mass {1}")]
    NotNormalized(String, String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Kind {
    Controlled,
    Random,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub to: usize,
    /// Ignored at controlled states.
    pub prob: BigRational,
    pub reward: BigRational,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FState {
    pub label: String,
    pub kind: Kind,
    pub edges: Vec<Edge>,
}

pub const WIN: &str = "WIN";
pub const LOSE: &str = "LOSE";
pub const FRONTIER: &str = "FRONTIER";

/// Fully enumerated MDP with distinguished win and lose sinks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteMdp {
    pub states: Vec<FState>,
    pub initial: usize,
    pub win: usize,
    pub lose: usize,
    /// Sink collecting cut-off edges of a frontier truncation.
    pub frontier: Option<usize>,
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn fmt_rat(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

impl FiniteMdp {
    /// Empty MDP holding only the two sinks.
    pub fn with_sinks() -> FiniteMdp {
        let mut m = FiniteMdp { states: Vec::new(), initial: 0, win: 0, lose: 1, frontier: None };
        m.win = m.push_sink(WIN, BigRational::zero());
        m.lose = m.push_sink(LOSE, -BigRational::one());
        m
    }

    fn push_sink(&mut self, label: &str, reward: BigRational) -> usize {
        let i = self.states.len();
        self.states.push(FState { label: label.into(), kind: Kind::Random, edges: vec![Edge { to: i, prob: BigRational::one(), reward }] });
        i
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s.label == label)
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        self.states[s].edges.iter().all(|e| e.to == s)
    }

    /// Probabilities at random states sum to exactly 1.
    pub fn validate(&self) -> Result<(), SolverError> {
        for s in &self.states {
            if s.edges.is_empty() {
                return Err(SolverError::NotNormalized(s.label.clone(), "0 (no successor)".into()));
            }
            if s.kind == Kind::Random {
                let total: BigRational = s.edges.iter().map(|e| e.prob.clone()).sum();
                if !total.is_one() || s.edges.iter().any(|e| !e.prob.is_positive()) {
                    return Err(SolverError::NotNormalized(s.label.clone(), fmt_rat(&total)));
                }
            }
        }
        Ok(())
    }

    /// One state per line: `id C|R succ:prob:reward ...`; the first line is
    /// the initial state.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut order: Vec<usize> = vec![self.initial];
        order.extend((0..self.len()).filter(|&i| i != self.initial));
        for i in order {
            let s = &self.states[i];
            let k = if s.kind == Kind::Controlled { "C" } else { "R" };
            let _ = write!(out, "{} {k}", s.label);
            for e in &s.edges {
                let _ = write!(out, " {}:{}:{}", self.states[e.to].label, fmt_rat(&e.prob), fmt_rat(&e.reward));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<FiniteMdp, SolverError> {
        let mut rows: Vec<(usize, String, Kind, Vec<(String, BigRational, BigRational)>)> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| SolverError::Parse { line: ln + 1, msg };
            let mut tok = line.split_whitespace();
            let id = tok.next().ok_or_else(|| perr("missing id".into()))?.to_string();
            let kind = match tok.next() {
                Some("C") => Kind::Controlled,
                Some("R") => Kind::Random,
                other => return Err(perr(format!("bad kind {other:?}"))),
            };
            let mut edges = Vec::new();
            for t in tok {
                let mut parts = t.rsplitn(3, ':');
                let (r, p, to) = (parts.next(), parts.next(), parts.next());
                let (Some(r), Some(p), Some(to)) = (r, p, to) else {
                    return Err(perr(format!("bad triple {t}")));
                };
                let p = parse_rational(p).ok_or_else(|| perr(format!("bad probability {p}")))?;
                let r = parse_rational(r).ok_or_else(|| perr(format!("bad reward {r}")))?;
                edges.push((to.to_string(), p, r));
            }
            rows.push((ln + 1, id, kind, edges));
        }
        let mut m = FiniteMdp { states: Vec::new(), initial: 0, win: usize::MAX, lose: usize::MAX, frontier: None };
        let mut index: HashMap<String, usize> = HashMap::new();
        for (ln, id, kind, _) in &rows {
            if index.insert(id.clone(), m.states.len()).is_some() {
                return Err(SolverError::Parse { line: *ln, msg: format!("duplicate state {id}") });
            }
            m.states.push(FState { label: id.clone(), kind: *kind, edges: Vec::new() });
        }
        // implicit sinks must exist before edges can point at them
        m.win = match index.get(WIN) {
            Some(&i) => i,
            None => m.push_sink(WIN, BigRational::zero()),
        };
        m.lose = match index.get(LOSE) {
            Some(&i) => i,
            None => m.push_sink(LOSE, -BigRational::one()),
        };
        index.entry(WIN.to_string()).or_insert(m.win);
        index.entry(LOSE.to_string()).or_insert(m.lose);
        for (ln, id, _, edges) in rows {
            let i = index[&id];
            for (to, prob, reward) in edges {
                let j = *index.get(&to).ok_or(SolverError::Parse { line: ln, msg: format!("unknown successor {to}") })?;
                m.states[i].edges.push(Edge { to: j, prob, reward });
            }
        }
        m.frontier = index.get(FRONTIER).copied();
        m.validate()?;
        Ok(m)
    }

    pub fn write<W: io::Write>(&self, mut w: W) -> Result<(), SolverError> {
        w.write_all(self.to_text().as_bytes()).map_err(|e| SolverError::Io(e.to_string()))
    }

    /// BFS distance from the initial state.
    pub fn distances(&self) -> Vec<Option<usize>> {
        let mut d = vec![None; self.len()];
        d[self.initial] = Some(0);
        let mut q = VecDeque::from([self.initial]);
        while let Some(s) = q.pop_front() {
            let ds = d[s].expect("queued");
            for e in &self.states[s].edges {
                if d[e.to].is_none() {
                    d[e.to] = Some(ds + 1);
                    q.push_back(e.to);
                }
            }
        }
        d
    }
}

/// States within distance `n` of `s0`, in BFS order.
pub fn bubble(mdp: &dyn LazyMdp, s0: &StateRef, n: usize, cap: usize) -> Result<Vec<StateRef>, SolverError> {
    let mut seen: HashSet<StateRef> = HashSet::from([s0.clone()]);
    let mut order = vec![s0.clone()];
    let mut frontier = vec![s0.clone()];
    for depth in 0..n {
        let mut next = Vec::new();
        for s in &frontier {
            let succ = mdp.successors(s)?;
            if !succ.is_finite() {
                return Err(SolverError::InfiniteBranching(s.to_string()));
            }
            for t in succ.targets(usize::MAX) {
                if seen.insert(t.clone()) {
                    if seen.len() > cap {
                        return Err(SolverError::BranchingExplosion { cap, depth: depth + 1 });
                    }
                    order.push(t.clone());
                    next.push(t);
                }
            }
        }
        frontier = next;
    }
    Ok(order)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Boundary {
    /// Cut edges lead to the losing sink.
    Pessimistic,
    /// Cut edges lead to the winning sink.
    Optimistic,
    /// Cut edges lead to a separate frontier sink.
    Frontier,
}

fn exact_prob(p: &Prob) -> BigRational {
    p.to_rational()
}

/// Finite MDP on `bubble`; edges leaving it are redirected per `boundary`.
/// Losing sinks of the source keep their own self-loops.
pub fn truncate(mdp: &dyn LazyMdp, bubble: &[StateRef], boundary: Boundary) -> Result<FiniteMdp, SolverError> {
    let mut m = FiniteMdp::with_sinks();
    let base = m.len();
    let index: HashMap<&StateRef, usize> = bubble.iter().enumerate().map(|(i, s)| (s, base + i)).collect();
    for s in bubble {
        let kind = if mdp.is_controlled(s)? { Kind::Controlled } else { Kind::Random };
        m.states.push(FState { label: s.to_string(), kind, edges: Vec::new() });
    }
    if boundary == Boundary::Frontier {
        m.frontier = Some(m.push_sink(FRONTIER, BigRational::zero()));
    }
    let cut = match boundary {
        Boundary::Pessimistic => m.lose,
        Boundary::Optimistic => m.win,
        Boundary::Frontier => m.frontier.expect("frontier sink"),
    };
    for (i, s) in bubble.iter().enumerate() {
        let pairs: Vec<(StateRef, BigRational)> = match mdp.successors(s)? {
            Successors::Controlled(c) => match c.support {
                Support::Finite(v) => v.into_iter().map(|t| (t, BigRational::one())).collect(),
                Support::Lazy(_) => return Err(SolverError::InfiniteBranching(s.to_string())),
            },
            Successors::Random(d) => match d.support {
                Support::Finite(v) => v.into_iter().map(|b| (b.target, exact_prob(&b.prob))).collect(),
                Support::Lazy(_) => return Err(SolverError::InfiniteBranching(s.to_string())),
            },
        };
        let mut edges = Vec::new();
        for (t, prob) in pairs {
            let reward = mdp.reward(s, &t)?;
            let to = index.get(&t).copied().unwrap_or(cut);
            edges.push(Edge { to, prob, reward });
        }
        m.states[base + i].edges = edges;
    }
    m.initial = base;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Objective {
    Reach(Vec<usize>),
    Safety(Vec<usize>),
    BoundedSafety(Vec<usize>, usize),
}

impl Objective {
    fn tag(&self) -> String {
        match self {
            Objective::Reach(t) => format!("reach({})", t.len()),
            Objective::Safety(b) => format!("safety({})", b.len()),
            Objective::BoundedSafety(b, k) => format!("bounded-safety({},{k})", b.len()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ViMode {
    Exact,
    Float { tol: f64, max_iter: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct ValueTable {
    pub objective: String,
    #[serde(skip)]
    pub exact: Option<Vec<BigRational>>,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl ValueTable {
    pub fn exact_at(&self, s: usize) -> Option<&BigRational> {
        self.exact.as_ref().map(|v| &v[s])
    }
}

/// Reverse topological order of non-absorbing, non-fixed states, or the
/// label of a state on a cycle.
fn backward_order(m: &FiniteMdp, fixed: &[bool]) -> Result<Vec<usize>, SolverError> {
    // iterative DFS with colors: 0 new, 1 open, 2 done
    let n = m.len();
    let mut color = vec![0u8; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if color[root] != 0 || fixed[root] {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        color[root] = 1;
        while let Some((s, k)) = stack.pop() {
            let edges = &m.states[s].edges;
            if k < edges.len() {
                stack.push((s, k + 1));
                let t = edges[k].to;
                if fixed[t] || (t == s && m.is_absorbing(s)) {
                    continue;
                }
                match color[t] {
                    0 => {
                        color[t] = 1;
                        stack.push((t, 0));
                    }
                    1 => return Err(SolverError::Cyclic(m.states[t].label.clone())),
                    _ => {}
                }
            } else {
                color[s] = 2;
                order.push(s);
            }
        }
    }
    Ok(order)
}

fn combine_exact(m: &FiniteMdp, s: usize, v: &[BigRational]) -> BigRational {
    let st = &m.states[s];
    match st.kind {
        Kind::Controlled => st.edges.iter().map(|e| &v[e.to]).max().cloned().unwrap_or_default(),
        Kind::Random => st.edges.iter().map(|e| &e.prob * &v[e.to]).sum(),
    }
}

fn combine_float(m: &FiniteMdp, probs: &[Vec<f64>], s: usize, v: &[f64]) -> f64 {
    let st = &m.states[s];
    match st.kind {
        Kind::Controlled => st.edges.iter().map(|e| v[e.to]).fold(0.0, f64::max),
        Kind::Random => st.edges.iter().zip(&probs[s]).map(|(e, p)| p * v[e.to]).sum(),
    }
}

/// Optimal values. Exact mode uses backward induction and needs the graph
/// to be acyclic outside the objective's fixed states and absorbing states;
/// bounded safety is exact on any graph.
pub fn value_iteration(m: &FiniteMdp, obj: &Objective, mode: ViMode) -> Result<ValueTable, SolverError> {
    let n = m.len();
    let in_set = |set: &[usize]| {
        let mut b = vec![false; n];
        for &i in set {
            b[i] = true;
        }
        b
    };
    let probs: Vec<Vec<f64>> = m.states.iter().map(|s| s.edges.iter().map(|e| rat_to_f64(&e.prob)).collect()).collect();
    match obj {
        Objective::BoundedSafety(bad, k) => {
            let bad = in_set(bad);
            let mut v: Vec<BigRational> = (0..n).map(|s| if bad[s] { BigRational::zero() } else { BigRational::one() }).collect();
            for _ in 0..*k {
                let next: Vec<BigRational> =
                    (0..n).map(|s| if bad[s] { BigRational::zero() } else { combine_exact(m, s, &v) }).collect();
                v = next;
            }
            let values = v.iter().map(rat_to_f64).collect();
            Ok(ValueTable { objective: obj.tag(), exact: Some(v), values, iterations: *k, residual: 0.0 })
        }
        Objective::Reach(set) | Objective::Safety(set) => {
            let reach = matches!(obj, Objective::Reach(_));
            let member = in_set(set);
            let absorbing: Vec<bool> = (0..n).map(|s| m.is_absorbing(s)).collect();
            // fixed values: the set itself and absorbing states
            let fixed_val = |s: usize| -> Option<bool> {
                if member[s] {
                    Some(reach)
                } else if absorbing[s] {
                    Some(!reach)
                } else {
                    None
                }
            };
            let fixed: Vec<bool> = (0..n).map(|s| fixed_val(s).is_some()).collect();
            match mode {
                ViMode::Exact => {
                    let order = backward_order(m, &fixed)?;
                    let mut v: Vec<BigRational> = (0..n)
                        .map(|s| match fixed_val(s) {
                            Some(true) => BigRational::one(),
                            _ => BigRational::zero(),
                        })
                        .collect();
                    for &s in &order {
                        v[s] = combine_exact(m, s, &v);
                    }
                    let values = v.iter().map(rat_to_f64).collect();
                    Ok(ValueTable { objective: obj.tag(), exact: Some(v), values, iterations: 1, residual: 0.0 })
                }
                ViMode::Float { tol, max_iter } => {
                    let init = |s: usize| match fixed_val(s) {
                        Some(b) => b as u8 as f64,
                        None => (!reach) as u8 as f64,
                    };
                    let mut v: Vec<f64> = (0..n).map(init).collect();
                    for it in 1..=max_iter {
                        let mut res: f64 = 0.0;
                        for s in 0..n {
                            if fixed[s] {
                                continue;
                            }
                            let x = combine_float(m, &probs, s, &v);
                            res = res.max((x - v[s]).abs());
                            v[s] = x;
                        }
                        if res <= tol {
                            return Ok(ValueTable { objective: obj.tag(), exact: None, values: v, iterations: it, residual: res });
                        }
                    }
                    Err(SolverError::NonConvergence(max_iter))
                }
            }
        }
    }
}

/// Per-state chosen edge index; `None` at random states.
pub type MdChoice = Vec<Option<usize>>;

/// Greedy MD strategy for the values; ties break to the lowest edge index.
pub fn extract_md(m: &FiniteMdp, vt: &ValueTable) -> MdChoice {
    (0..m.len())
        .map(|s| {
            let st = &m.states[s];
            if st.kind != Kind::Controlled {
                return None;
            }
            let mut best = 0;
            for (i, e) in st.edges.iter().enumerate() {
                let better = match &vt.exact {
                    Some(v) => v[e.to] > v[st.edges[best].to],
                    None => vt.values[e.to] > vt.values[st.edges[best].to] + 1e-12,
                };
                if better {
                    best = i;
                }
            }
            Some(best)
        })
        .collect()
}

/// MD table keyed by labels.
pub fn md_labels(m: &FiniteMdp, md: &MdChoice) -> Vec<(String, String)> {
    md.iter()
        .enumerate()
        .filter_map(|(s, c)| c.map(|i| (m.states[s].label.clone(), m.states[m.states[s].edges[i].to].label.clone())))
        .collect()
}

pub fn write_md_csv<W: io::Write>(w: W, rows: &[(String, String)]) -> Result<(), SolverError> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| SolverError::Io(e.to_string());
    out.write_record(["state", "action"]).map_err(err)?;
    for (s, a) in rows {
        out.write_record([s, a]).map_err(err)?;
    }
    out.flush().map_err(|e| SolverError::Io(e.to_string()))
}

/// Greatest set from which negative-reward transitions can be avoided
/// forever. The frontier sink is never safe.
pub fn safe_region(m: &FiniteMdp) -> Vec<bool> {
    let mut safe: Vec<bool> = (0..m.len()).map(|s| s != m.lose && Some(s) != m.frontier).collect();
    loop {
        let mut changed = false;
        for s in 0..m.len() {
            if !safe[s] {
                continue;
            }
            let ok_edge = |e: &Edge| !e.reward.is_negative() && safe[e.to];
            let st = &m.states[s];
            let keep = match st.kind {
                Kind::Controlled => st.edges.iter().any(ok_edge),
                Kind::Random => st.edges.iter().all(ok_edge),
            };
            if !keep {
                safe[s] = false;
                changed = true;
            }
        }
        if !changed {
            return safe;
        }
    }
}

/// Edges into the safe region lead to the winning sink instead.
pub fn build_m_prime(m: &FiniteMdp, safe: &[bool]) -> FiniteMdp {
    let mut out = m.clone();
    for (s, st) in out.states.iter_mut().enumerate() {
        if s == m.win {
            continue;
        }
        for e in &mut st.edges {
            if safe[e.to] && e.to != s {
                e.to = m.win;
            }
        }
    }
    out
}

/// Safety MD on the safe region: the first non-negative edge staying safe.
pub fn safety_md(m: &FiniteMdp, safe: &[bool]) -> MdChoice {
    (0..m.len())
        .map(|s| {
            let st = &m.states[s];
            (st.kind == Kind::Controlled && safe[s])
                .then(|| st.edges.iter().position(|e| !e.reward.is_negative() && safe[e.to]))
                .flatten()
        })
        .collect()
}

/// Edges with reward < −2^{-i} whose source lies outside the bubble of
/// radius `n_i`.
pub fn bad_transitions(m: &FiniteMdp, i: u32, n_i: usize) -> Vec<(usize, usize)> {
    let bound = -BigRational::new(BigInt::one(), BigInt::one() << i);
    let dist = m.distances();
    let mut out = Vec::new();
    for (s, st) in m.states.iter().enumerate() {
        if s == m.lose || dist[s].is_none_or(|d| d <= n_i) {
            continue;
        }
        for (k, e) in st.edges.iter().enumerate() {
            if e.reward < bound {
                out.push((s, k));
            }
        }
    }
    out
}

/// Redirects every bad transition of every level i to the losing sink.
pub fn build_m_double_prime(m: &FiniteMdp, radii: &[usize]) -> FiniteMdp {
    let mut out = m.clone();
    for (i, &n_i) in radii.iter().enumerate() {
        for (s, k) in bad_transitions(m, i as u32, n_i) {
            out.states[s].edges[k].to = m.lose;
        }
    }
    out
}

/// MD maximizing the chance to reach the frontier or the winning sink
/// without the losing sink: the finite-scale stand-in for transience.
pub fn transience_proxy_md(m: &FiniteMdp) -> Result<(MdChoice, ValueTable), SolverError> {
    let mut targets = vec![m.win];
    targets.extend(m.frontier);
    let vt = value_iteration(m, &Objective::Reach(targets), ViMode::Exact)?;
    Ok((extract_md(m, &vt), vt))
}

/// Strongly connected components in reverse topological order (Tarjan).
fn sccs(n: usize, succ: &dyn Fn(usize) -> Vec<usize>) -> Vec<Vec<usize>> {
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut next = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work = vec![(root, 0usize, succ(root))];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on[root] = true;
        while let Some((v, k, ss)) = work.pop() {
            if k < ss.len() {
                let w = ss[k];
                work.push((v, k + 1, ss));
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on[w] = true;
                    work.push((w, 0, succ(w)));
                } else if on[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                if let Some((u, _, _)) = work.last() {
                    let u = *u;
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("scc stack");
                        on[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    out.push(comp);
                }
            }
        }
    }
    out
}

/// Solves x = A x + b on one component by exact Gaussian elimination.
fn solve_component(comp: &[usize], rows: &HashMap<usize, (Vec<(usize, BigRational)>, BigRational)>) -> HashMap<usize, BigRational> {
    let k = comp.len();
    let pos: HashMap<usize, usize> = comp.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut a = vec![vec![BigRational::zero(); k + 1]; k];
    for (i, s) in comp.iter().enumerate() {
        let (coef, b) = &rows[s];
        a[i][i] = BigRational::one();
        for (t, p) in coef {
            let j = pos[t];
            a[i][j] -= p;
        }
        a[i][k] = b.clone();
    }
    for col in 0..k {
        let piv = (col..k).find(|&r| !a[r][col].is_zero()).expect("transient component is nonsingular");
        a.swap(col, piv);
        let p = a[col][col].clone();
        for c in col..=k {
            a[col][c] = &a[col][c] / &p;
        }
        for r in 0..k {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                for c in col..=k {
                    let x = &f * &a[col][c];
                    a[r][c] -= x;
                }
            }
        }
    }
    comp.iter().enumerate().map(|(i, &s)| (s, a[i][k].clone())).collect()
}

/// Exact probability that the MD-induced chain satisfies the liminf
/// point-payoff objective: it ends in a bottom component whose edges all
/// have reward ≥ 0. The frontier sink counts as losing.
pub fn md_attainment(m: &FiniteMdp, md: &MdChoice) -> Vec<BigRational> {
    let n = m.len();
    let used = |s: usize| -> Vec<(usize, BigRational, BigRational)> {
        let st = &m.states[s];
        match (st.kind, md.get(s).copied().flatten()) {
            (Kind::Controlled, Some(i)) => vec![(st.edges[i].to, BigRational::one(), st.edges[i].reward.clone())],
            (Kind::Controlled, None) => vec![(st.edges[0].to, BigRational::one(), st.edges[0].reward.clone())],
            (Kind::Random, _) => st.edges.iter().map(|e| (e.to, e.prob.clone(), e.reward.clone())).collect(),
        }
    };
    let comps = sccs(n, &|s| used(s).into_iter().map(|x| x.0).collect());
    let mut comp_of = vec![0; n];
    for (c, comp) in comps.iter().enumerate() {
        for &s in comp {
            comp_of[s] = c;
        }
    }
    let mut value = vec![BigRational::zero(); n];
    // reverse topological: successors' components are finished first
    for (c, comp) in comps.iter().enumerate() {
        let bottom = comp.iter().all(|&s| used(s).iter().all(|e| comp_of[e.0] == c));
        if bottom {
            let winning = Some(comp[0]) != m.frontier
                && comp.iter().all(|&s| used(s).iter().all(|e| !e.2.is_negative()));
            let v = if winning { BigRational::one() } else { BigRational::zero() };
            for &s in comp {
                value[s] = v.clone();
            }
            continue;
        }
        let mut rows = HashMap::new();
        for &s in comp {
            let mut coef = Vec::new();
            let mut b = BigRational::zero();
            for (t, p, _) in used(s) {
                if comp_of[t] == c {
                    coef.push((t, p));
                } else {
                    b += &p * &value[t];
                }
            }
            rows.insert(s, (coef, b));
        }
        if comp.len() == 1 && rows[&comp[0]].0.is_empty() {
            value[comp[0]] = rows[&comp[0]].1.clone();
        } else {
            for (s, v) in solve_component(comp, &rows) {
                value[s] = v;
            }
        }
    }
    value
}

/// Exact optimal value of the liminf point-payoff objective: the best chance
/// to reach the safe region.
pub fn pp_value(m: &FiniteMdp) -> Result<(Vec<BigRational>, Vec<bool>), SolverError> {
    let safe = safe_region(m);
    let targets: Vec<usize> = (0..m.len()).filter(|&s| safe[s]).collect();
    let vt = value_iteration(m, &Objective::Reach(targets), ViMode::Exact)?;
    Ok((vt.exact.expect("exact mode"), safe))
}

/// Smallest k with a (bad-free-from-k) bounded safety value below 1, when
/// the plain safety value is below 1: the finite-scale dichotomy that an
/// unsafe state has a fixed chance to see the bad set within k steps.
pub fn bounded_safety_witness(m: &FiniteMdp, bad: &[usize], s: usize, kmax: usize) -> Result<Option<usize>, SolverError> {
    let plain = value_iteration(m, &Objective::Safety(bad.to_vec()), ViMode::Float { tol: 1e-12, max_iter: 100_000 })?;
    if plain.values[s] >= 1.0 - 1e-12 {
        return Ok(None);
    }
    for k in 0..=kmax {
        let vt = value_iteration(m, &Objective::BoundedSafety(bad.to_vec(), k), ViMode::Exact)?;
        if !vt.exact_at(s).expect("exact").is_one() {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    /// Levels i = 0..levels of the Safety_i radii.
    pub levels: u32,
    pub episodes: u64,
    pub seed: u64,
    pub z: f64,
    pub max_steps: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { levels: 4, episodes: 2000, seed: 7, z: 1.96, max_steps: 10_000 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineResult {
    #[serde(skip)]
    pub md: MdChoice,
    pub table: Vec<(String, String)>,
    #[serde(skip)]
    pub value: BigRational,
    #[serde(skip)]
    pub attainment: BigRational,
    pub value_f64: f64,
    pub attainment_f64: f64,
    pub radii: Vec<usize>,
    pub safe_states: usize,
    pub certified: bool,
}

/// For one Monte Carlo run under `md`: whether it ends winning, and the
/// largest source distance of a transition with reward < −2^{-i}, per i.
fn sample_bad_depths(m: &FiniteMdp, md: &MdChoice, dist: &[Option<usize>], seed: u64, levels: u32, max_steps: usize) -> (bool, Vec<Option<usize>>) {
    let bounds: Vec<BigRational> = (0..levels).map(|i| -BigRational::new(BigInt::one(), BigInt::one() << i)).collect();
    let mut worst = vec![None; levels as usize];
    let mut s = m.initial;
    for t in 0..max_steps {
        if m.is_absorbing(s) {
            break;
        }
        let st = &m.states[s];
        let e = match st.kind {
            Kind::Controlled => &st.edges[md[s].unwrap_or(0)],
            Kind::Random => {
                let u = draw(seed, t as u64);
                let mut acc = 0.0;
                let mut pick = st.edges.last().expect("edges");
                for e in &st.edges {
                    acc += rat_to_f64(&e.prob);
                    if u < acc {
                        pick = e;
                        break;
                    }
                }
                pick
            }
        };
        for (i, b) in bounds.iter().enumerate() {
            if &e.reward < b {
                worst[i] = worst[i].max(dist[s]);
            }
        }
        s = e.to;
    }
    (s == m.win, worst)
}

/// Chooses nondecreasing radii n_i: the smallest k such that, under the
/// reference strategy, winning runs that still see a reward < −2^{-i} from
/// beyond radius k have Wilson-upper frequency ≤ ε·2^{-i}.
pub fn choose_radii(m: &FiniteMdp, reference: &MdChoice, eps: f64, cfg: &PipelineConfig) -> Vec<usize> {
    let dist = m.distances();
    let max_d = dist.iter().flatten().copied().max().unwrap_or(0);
    let samples: Vec<(bool, Vec<Option<usize>>)> = (0..cfg.episodes)
        .map(|e| sample_bad_depths(m, reference, &dist, episode_seed(cfg.seed, e), cfg.levels, cfg.max_steps))
        .collect();
    let mut radii = Vec::new();
    let mut prev = 0;
    for i in 0..cfg.levels as usize {
        let budget = eps / f64::powi(2.0, i as i32);
        let mut chosen = max_d;
        for k in prev..=max_d {
            let hits = samples.iter().filter(|(win, w)| *win && w[i].is_some_and(|d| d > k)).count() as u64;
            let (_, hi) = wilson_interval(hits, cfg.episodes.max(1), cfg.z);
            if hi <= budget {
                chosen = k;
                break;
            }
        }
        prev = chosen.max(prev);
        radii.push(prev);
    }
    radii
}

/// The ε-optimal MD pipeline on a finite (pessimistically truncated) MDP.
/// Certifies attainment + 3ε ≥ value exactly.
pub fn eps_opt_md_pipeline(m: &FiniteMdp, eps: &BigRational, cfg: &PipelineConfig) -> Result<PipelineResult, SolverError> {
    let (values, safe) = pp_value(m)?;
    let value = values[m.initial].clone();
    let safety = safety_md(m, &safe);
    let finish = |md: MdChoice, radii: Vec<usize>| -> Result<PipelineResult, SolverError> {
        let att = md_attainment(m, &md)[m.initial].clone();
        let certified = &att + eps * BigRational::from_integer(3.into()) >= value;
        let res = PipelineResult {
            table: md_labels(m, &md),
            md,
            value_f64: rat_to_f64(&value),
            attainment_f64: rat_to_f64(&att),
            value: value.clone(),
            attainment: att,
            radii,
            safe_states: safe.iter().filter(|&&b| b).count(),
            certified,
        };
        if certified {
            Ok(res)
        } else {
            Err(SolverError::BudgetNotMet { value: fmt_rat(&res.value), attainment: fmt_rat(&res.attainment) })
        }
    };
    if safe[m.initial] {
        return finish(safety, Vec::new());
    }
    let m1 = build_m_prime(m, &safe);
    let reference = extract_md(&m1, &value_iteration(&m1, &Objective::Reach(vec![m1.win]), ViMode::Exact)?);
    let radii = choose_radii(&m1, &reference, rat_to_f64(eps), cfg);
    let m2 = build_m_double_prime(&m1, &radii);
    let (proxy, _) = transience_proxy_md(&m2)?;
    let stitched: MdChoice = (0..m.len()).map(|s| if safe[s] { safety[s] } else { proxy[s] }).collect();
    finish(stitched, radii)
}

/// Registered finite test family: a layered MDP with deterministic
/// pseudo-random structure, rewards in {−2,−1,−1/2,−1/4,0,1}, absorbing
/// safe rests and a losing sink.
#[derive(Clone, Debug)]
pub struct Ladder {
    pub levels: i64,
    pub width: i64,
    pub seed: u64,
}

impl Ladder {
    pub fn new(levels: i64, width: i64, seed: u64) -> Ladder {
        Ladder { levels, width, seed }
    }

    fn h(&self, a: i64, b: i64, c: i64) -> u64 {
        let mut z = crate::montecarlo::mix(self.seed ^ 0x5151);
        for v in [a, b, c] {
            z = crate::montecarlo::mix(z ^ v as u64);
        }
        z
    }

    fn reward_of(&self, code: u64) -> BigRational {
        match code % 8 {
            0 | 1 | 2 => BigRational::zero(),
            3 => rat(1, 1),
            4 => rat(-1, 4),
            5 => rat(-1, 2),
            6 => rat(-1, 1),
            _ => rat(-2, 1),
        }
    }

    fn cell(&self, s: &StateRef) -> Option<(i64, i64)> {
        if !s.is("l") || s.arity() != 2 {
            return None;
        }
        let (l, x) = (s.int(0)?, s.int(1)?);
        (0 <= l && l < self.levels && 0 <= x && x < self.width).then_some((l, x))
    }

    /// Successor labels with rewards; probabilities only at random cells.
    fn out(&self, l: i64, x: i64) -> Vec<(StateRef, u64, BigRational)> {
        let fan = 2 + (self.h(l, x, 0) % 2) as i64;
        let mut out = Vec::new();
        for k in 0..fan {
            let code = self.h(l, x, k + 1);
            let target = if l + 1 == self.levels {
                if code % 3 == 0 {
                    StateRef::atom("bot")
                } else {
                    StateRef::atom("rest")
                }
            } else {
                StateRef::ints("l", &[l + 1, (code >> 8) as i64 % self.width])
            };
            out.push((target, 1 + (code >> 16) % 4, self.reward_of(code >> 24)));
        }
        if self.h(l, x, 99) % 9 == 0 {
            out.push((StateRef::atom("rest"), 1, self.reward_of(self.h(l, x, 98))));
        }
        if !self.controlled(l, x) && self.h(l, x, 97) % 3 == 0 {
            out.push((StateRef::atom("bot"), 1, rat(-1, 1)));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.cmp(&b.2)));
        out.dedup_by(|a, b| a.0 == b.0);
        out
    }

    fn controlled(&self, l: i64, x: i64) -> bool {
        self.h(l, x, 7) % 3 == 0
    }
}

impl LazyMdp for Ladder {
    fn name(&self) -> String {
        format!("ladder({},{},{})", self.levels, self.width, self.seed)
    }

    fn initial(&self) -> StateRef {
        StateRef::ints("l", &[0, 0])
    }

    fn successors(&self, s: &StateRef) -> Result<Successors, MdpError> {
        if (s.is("rest") || s.is("bot")) && s.arity() == 0 {
            return Ok(Successors::Random(SuccessorDist::dirac(s.clone())));
        }
        let (l, x) = self.cell(s).ok_or_else(|| MdpError::UnknownState(s.to_string()))?;
        let out = self.out(l, x);
        if self.controlled(l, x) {
            return Ok(Successors::Controlled(ChoiceList::finite(out.into_iter().map(|o| o.0).collect())));
        }
        let total: u64 = out.iter().map(|o| o.1).sum();
        Ok(Successors::Random(SuccessorDist::finite(
            out.into_iter().map(|(t, w, _)| Branch { target: t, prob: Prob::ratio(w, total) }).collect(),
        )))
    }

    fn reward(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        let nat = || MdpError::NotATransition(s.to_string(), t.to_string());
        if s.is("rest") && t == s {
            return Ok(BigRational::zero());
        }
        if s.is("bot") && t == s {
            return Ok(rat(-1, 1));
        }
        let (l, x) = self.cell(s).ok_or_else(|| MdpError::UnknownState(s.to_string()))?;
        self.out(l, x).into_iter().find(|o| &o.0 == t).map(|o| o.2).ok_or_else(nat)
    }

    fn is_losing_sink(&self, s: &StateRef) -> bool {
        s.is("bot")
    }
}

/// Registered solver test families by name.
pub fn test_family(name: &str) -> Option<Ladder> {
    match name {
        "ladder" => Some(Ladder::new(14, 8, 3)),
        "ladder-small" => Some(Ladder::new(6, 4, 11)),
        _ => None,
    }
}
