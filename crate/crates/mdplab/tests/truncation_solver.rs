use mdplab::mdp::rat_to_f64;
use mdplab::solver::{
    bounded_safety_witness, bubble, build_m_prime, eps_opt_md_pipeline, extract_md, md_attainment, md_labels, pp_value,
    safe_region, test_family, truncate, value_iteration, write_md_csv, Boundary, FiniteMdp, Kind, MdChoice, Objective,
    PipelineConfig, SolverError, ViMode,
};
use mdplab::LazyMdp;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

const FLOAT: ViMode = ViMode::Float { tol: 1e-13, max_iter: 100_000 };

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn reach_win(m: &FiniteMdp, mode: ViMode) -> mdplab::solver::ValueTable {
    value_iteration(m, &Objective::Reach(vec![m.win]), mode).unwrap()
}

#[test]
fn a_fair_coin_has_value_one_half() {
    let m = FiniteMdp::from_text("coin R WIN:1/2:0 LOSE:1/2:0\n").unwrap();
    assert_eq!(reach_win(&m, ViMode::Exact).exact_at(m.initial).unwrap(), &rat(1, 2));
    assert!((reach_win(&m, FLOAT).values[m.initial] - 0.5).abs() < 1e-12);
    // with a choice of coins the better one wins
    let m = FiniteMdp::from_text("c C a:1:0 b:1:0\na R WIN:1/3:0 LOSE:2/3:0\nb R WIN:3/4:0 LOSE:1/4:-1\n").unwrap();
    let vt = reach_win(&m, ViMode::Exact);
    assert_eq!(vt.exact_at(m.initial).unwrap(), &rat(3, 4));
    assert_eq!(md_labels(&m, &extract_md(&m, &vt)), vec![("c".to_string(), "b".to_string())]);
}

#[test]
fn bounded_safety_counts_steps() {
    let text = "x R y:1/2:0 x2:1/2:0\nx2 R y:1/2:0 WIN:1/2:0\ny R y:1:-1\n";
    let m = FiniteMdp::from_text(text).unwrap();
    let y = m.index_of("y").unwrap();
    let at = |k| value_iteration(&m, &Objective::BoundedSafety(vec![y], k), ViMode::Exact).unwrap().exact.unwrap();
    assert!(at(0)[m.initial].is_one());
    assert!(at(0)[y].is_zero());
    assert_eq!(at(1)[m.initial], rat(1, 2));
    assert_eq!(at(2)[m.initial], rat(1, 4));
    assert_eq!(at(9)[m.initial], rat(1, 4));
    assert_eq!(bounded_safety_witness(&m, &[y], m.initial, 5).unwrap(), Some(1));
}

/// Random acyclic MDP text over q0..q{n-1}; edges go forward or to a sink.
fn acyclic_text() -> impl Strategy<Value = String> {
    let state = (any::<bool>(), prop::collection::vec((0usize..8, 1u64..5, -1i64..2), 1..4));
    prop::collection::vec(state, 2..7).prop_map(|rows| {
        let n = rows.len();
        let mut out = String::new();
        for (i, (controlled, edges)) in rows.iter().enumerate() {
            let mut targets: Vec<(String, u64, i64)> = Vec::new();
            for &(t, w, r) in edges {
                let name = match t {
                    0 => "WIN".to_string(),
                    1 => "LOSE".to_string(),
                    k => {
                        let j = i + k - 1;
                        if j < n { format!("q{j}") } else { "WIN".to_string() }
                    }
                };
                if !targets.iter().any(|x| x.0 == name) {
                    targets.push((name, w, r));
                }
            }
            let total: u64 = targets.iter().map(|x| x.1).sum();
            out.push_str(&format!("q{i} {}", if *controlled { "C" } else { "R" }));
            for (name, w, r) in targets {
                out.push_str(&format!(" {name}:{w}/{total}:{r}"));
            }
            out.push('\n');
        }
        out
    })
}

/// Reach value of one MD choice by backward evaluation over q-indices.
fn md_reach(m: &FiniteMdp, md: &MdChoice) -> Vec<BigRational> {
    let mut v = vec![BigRational::zero(); m.len()];
    v[m.win] = BigRational::one();
    let mut order: Vec<usize> = (0..m.len()).filter(|&s| m.states[s].label.starts_with('q')).collect();
    order.sort_by_key(|&s| std::cmp::Reverse(m.states[s].label[1..].parse::<usize>().unwrap()));
    for s in order {
        let st = &m.states[s];
        v[s] = match st.kind {
            Kind::Controlled => v[st.edges[md[s].unwrap()].to].clone(),
            Kind::Random => st.edges.iter().map(|e| &e.prob * &v[e.to]).sum(),
        };
    }
    v
}

fn all_mds(m: &FiniteMdp) -> Vec<MdChoice> {
    let mut out: Vec<MdChoice> = vec![vec![None; m.len()]];
    for s in 0..m.len() {
        if m.states[s].kind == Kind::Controlled {
            out = out
                .into_iter()
                .flat_map(|md| {
                    (0..m.states[s].edges.len()).map(move |i| {
                        let mut x = md.clone();
                        x[s] = Some(i);
                        x
                    })
                })
                .collect();
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn values_match_the_best_md_by_brute_force(text in acyclic_text()) {
        let m = FiniteMdp::from_text(&text).unwrap();
        let vt = reach_win(&m, ViMode::Exact);
        let best = all_mds(&m).iter().map(|md| md_reach(&m, md)[m.initial].clone()).max().unwrap();
        prop_assert_eq!(vt.exact_at(m.initial).unwrap(), &best);
        // the greedy MD attains it
        let md = extract_md(&m, &vt);
        prop_assert_eq!(&md_reach(&m, &md)[m.initial], &best);
        let fl = reach_win(&m, FLOAT);
        for s in 0..m.len() {
            prop_assert!((fl.values[s] - rat_to_f64(vt.exact_at(s).unwrap())).abs() <= 1e-9);
        }
    }

    #[test]
    fn text_round_trips(text in acyclic_text()) {
        let m = FiniteMdp::from_text(&text).unwrap();
        let again = FiniteMdp::from_text(&m.to_text()).unwrap();
        prop_assert_eq!(again.to_text(), m.to_text());
        prop_assert_eq!(again.states[again.initial].label.clone(), "q0");
    }

    #[test]
    fn m_prime_keeps_the_point_payoff_value(text in acyclic_text()) {
        let m = FiniteMdp::from_text(&text).unwrap();
        let (values, safe) = pp_value(&m).unwrap();
        let m1 = build_m_prime(&m, &safe);
        let v1 = reach_win(&m1, ViMode::Exact);
        prop_assert_eq!(v1.exact_at(m1.initial).unwrap(), &values[m.initial]);
    }

    #[test]
    fn pipeline_certifies_with_a_large_budget(text in acyclic_text()) {
        let m = FiniteMdp::from_text(&text).unwrap();
        let r = eps_opt_md_pipeline(&m, &BigRational::one(), &PipelineConfig { episodes: 50, ..Default::default() }).unwrap();
        prop_assert!(r.certified);
        prop_assert_eq!(&md_attainment(&m, &r.md)[m.initial], &r.attainment);
    }
}

#[test]
fn all_safe_start_uses_the_safety_strategy() {
    let m = FiniteMdp::from_text("a C b:1:0 c:1:-1\nb R a2:1:1\na2 C WIN:1:0\nc R WIN:1:0\n").unwrap();
    let safe = safe_region(&m);
    assert!(safe[m.initial]);
    let r = eps_opt_md_pipeline(&m, &rat(1, 100), &PipelineConfig::default()).unwrap();
    assert!(r.radii.is_empty());
    assert!(r.attainment.is_one() && r.value.is_one());
    assert_eq!(r.table[0], ("a".to_string(), "b".to_string()));
}

#[test]
fn truncations_bracket_and_tighten() {
    let lad = test_family("ladder-small").unwrap();
    let s0 = lad.initial();
    let mut prev: Option<(BigRational, BigRational)> = None;
    for r in 1..=7 {
        let b = bubble(&lad, &s0, r, 100_000).unwrap();
        let pes = truncate(&lad, &b, Boundary::Pessimistic).unwrap();
        let opt = truncate(&lad, &b, Boundary::Optimistic).unwrap();
        let lo = pp_value(&pes).unwrap().0[pes.initial].clone();
        let hi = pp_value(&opt).unwrap().0[opt.initial].clone();
        assert!(lo <= hi, "radius {r}");
        if let Some((plo, phi)) = &prev {
            assert!(plo <= &lo && &hi <= phi, "radius {r}");
        }
        prev = Some((lo, hi));
    }
    // past the last level nothing is cut
    let (lo, hi) = prev.unwrap();
    assert_eq!(lo, hi);
}

#[test]
fn the_ladder_pipeline_is_three_eps_optimal() {
    let lad = test_family("ladder").unwrap();
    let b = bubble(&lad, &lad.initial(), 9, 100_000).unwrap();
    let m = truncate(&lad, &b, Boundary::Pessimistic).unwrap();
    let eps = rat(1, 20);
    let r = eps_opt_md_pipeline(&m, &eps, &PipelineConfig::default()).unwrap();
    assert!(r.certified);
    assert!(&r.attainment + &eps * rat(3, 1) >= r.value);
    assert!(r.radii.windows(2).all(|w| w[0] <= w[1]));
    let mut csv = Vec::new();
    write_md_csv(&mut csv, &r.table).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), r.table.len() + 1);
}

#[test]
fn malformed_inputs_are_reported() {
    assert!(matches!(FiniteMdp::from_text("a R WIN:1/2:0\n"), Err(SolverError::NotNormalized(..))));
    assert!(matches!(FiniteMdp::from_text("a R nowhere:1:0\n"), Err(SolverError::Parse { line: 1, .. })));
    assert!(matches!(FiniteMdp::from_text("a X WIN:1:0\n"), Err(SolverError::Parse { .. })));
    assert!(matches!(FiniteMdp::from_text("a C WIN:1:0\na C WIN:1:0\n"), Err(SolverError::Parse { line: 2, .. })));
    let cyc = FiniteMdp::from_text("a C b:1:0 WIN:1:0\nb R a:1/2:0 LOSE:1/2:0\n").unwrap();
    assert!(matches!(value_iteration(&cyc, &Objective::Reach(vec![cyc.win]), ViMode::Exact), Err(SolverError::Cyclic(_))));
    // float mode and bounded safety handle cycles
    assert!((reach_win(&cyc, FLOAT).values[cyc.initial] - 1.0).abs() < 1e-9);
    assert!(value_iteration(&cyc, &Objective::BoundedSafety(vec![cyc.lose], 5), ViMode::Exact).is_ok());
}

#[test]
fn infinitely_branching_states_cannot_be_truncated() {
    let ib = mdplab::constructions::build_named("inf-branch", "quadratic", true).unwrap().mdp;
    assert!(matches!(bubble(&*ib, &ib.initial(), 2, 1000), Err(SolverError::InfiniteBranching(_))));
}
