//! Randomized invariants. Whatever the inputs: the tag codec stays
//! bijective, canonical SQL text is a parse fixpoint, masking hides exactly
//! the flagged positions, and the counting types conserve what they count.

use std::net::Ipv4Addr;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use palisade_core::fixed::{Fixed, RollingSum};
use palisade_core::scheduler::SchedulerError;
use palisade_core::sim::{
    cleanse_zero_exact, p_success, p_success_bound, quantile, run_trial, sample_cleanse,
    CompromiseState, SimParams,
};
use palisade_core::sql::{
    leads_with_select, normalize, parse_sql, AssignValue, Assignment, ColumnRef, CmpOp,
    Condition, Delete, Ident, Insert, InsertSource, Literal, NormalizationPolicy, Operand,
    Select, SelectItem, SelectItems, Statement, Update,
};
use palisade_core::tag::{
    decode_option, encode_option, id_in_window, make_tag, verify_tag, RequestTag, TagCheck,
    TagKey,
};
use palisade_core::{Scheduler, SystemConfig};

// --- SQL statement generators ---

// Identifier pool: bare names, printable ASCII, and short unicode. Quoting
// makes any non-empty string representable; the one exception is `distinct`,
// which the parser rejects by name at the head of a select list because it
// cannot be told apart from the DISTINCT qualifier there.
fn ident() -> impl Strategy<Value = Ident> {
    prop_oneof![
        4 => "[a-z_][a-z0-9_]{0,7}",
        2 => "[ -~]{1,8}",
        1 => "\\PC{1,4}",
    ]
    .prop_map(|s: String| if s == "distinct" { Ident("distinct_".into()) } else { Ident(s) })
}

// Float literals carry their lexeme verbatim, so generate only lexemes the
// tokenizer produces: digits first, then a fraction, an exponent, or both.
fn float_lexeme() -> impl Strategy<Value = String> {
    prop::string::string_regex(
        "-?[0-9]{1,7}(\\.[0-9]{1,6}([eE][+-]?[0-9]{1,2})?|[eE][+-]?[0-9]{1,2})",
    )
    .unwrap()
}

fn literal() -> impl Strategy<Value = Literal> {
    prop_oneof![
        3 => "[ -~]{0,10}".prop_map(Literal::String),
        1 => "\\PC{0,4}".prop_map(Literal::String),
        3 => any::<i128>()
            .prop_map(|v| Literal::Integer(if v == i128::MIN { 0 } else { v })),
        2 => float_lexeme().prop_map(Literal::Float),
        1 => Just(Literal::Null),
    ]
}

fn column_ref() -> impl Strategy<Value = ColumnRef> {
    (prop::option::of(ident()), ident()).prop_map(|(table, column)| ColumnRef { table, column })
}

fn cmp_op() -> impl Strategy<Value = CmpOp> {
    prop::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge])
}

fn operand() -> impl Strategy<Value = Operand> {
    prop_oneof![
        2 => literal().prop_map(Operand::Literal),
        1 => column_ref().prop_map(Operand::Column),
    ]
}

fn condition() -> impl Strategy<Value = Condition> {
    prop_oneof![
        3 => (column_ref(), cmp_op(), operand())
            .prop_map(|(left, op, right)| Condition::Compare { left, op, right }),
        1 => (column_ref(), any::<bool>())
            .prop_map(|(column, negated)| Condition::IsNull { column, negated }),
    ]
}

fn where_clause() -> impl Strategy<Value = Vec<Condition>> {
    prop::collection::vec(condition(), 0..3)
}

fn select_item() -> impl Strategy<Value = SelectItem> {
    prop_oneof![
        2 => column_ref().prop_map(SelectItem::Column),
        1 => literal().prop_map(SelectItem::Literal),
    ]
}

fn select() -> impl Strategy<Value = Select> {
    let items = prop_oneof![
        1 => Just(SelectItems::Star),
        3 => prop::collection::vec(select_item(), 1..4).prop_map(SelectItems::Items),
    ];
    (items, prop::option::of(ident()), where_clause())
        .prop_map(|(items, from, where_clause)| Select { items, from, where_clause })
}

fn insert() -> impl Strategy<Value = Insert> {
    // pairing column names with values keeps the lengths equal, which the
    // parser enforces for VALUES under a column list
    let listed_values = prop::collection::vec((ident(), literal()), 1..4).prop_map(|pairs| {
        let (columns, values): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        (Some(columns), InsertSource::Values(values))
    });
    let bare_values = prop::collection::vec(literal(), 1..4)
        .prop_map(|values| (None, InsertSource::Values(values)));
    let from_select = (prop::option::of(prop::collection::vec(ident(), 1..4)), select())
        .prop_map(|(columns, select)| (columns, InsertSource::Select(select)));
    (ident(), prop_oneof![3 => listed_values, 1 => bare_values, 2 => from_select])
        .prop_map(|(table, (columns, source))| Insert { table, columns, source })
}

fn assignment() -> impl Strategy<Value = Assignment> {
    let value = prop_oneof![
        4 => literal().prop_map(AssignValue::Literal),
        1 => select().prop_map(AssignValue::Subquery),
    ];
    (ident(), value).prop_map(|(column, value)| Assignment { column, value })
}

fn update() -> impl Strategy<Value = Update> {
    (ident(), prop::collection::vec(assignment(), 1..4), where_clause())
        .prop_map(|(table, assignments, where_clause)| Update { table, assignments, where_clause })
}

fn delete() -> impl Strategy<Value = Delete> {
    (ident(), where_clause()).prop_map(|(table, where_clause)| Delete { table, where_clause })
}

fn statement() -> impl Strategy<Value = Statement> {
    prop_oneof![
        3 => insert().prop_map(Statement::Insert),
        3 => update().prop_map(Statement::Update),
        2 => delete().prop_map(Statement::Delete),
        3 => select().prop_map(Statement::Select),
    ]
}

// --- canonical text and masking ---

proptest! {
    #[test]
    fn canonical_text_reparses_to_the_same_tree(stmt in statement()) {
        let text = stmt.unparse();
        let reparsed = match parse_sql(&text) {
            Ok(reparsed) => reparsed,
            Err(e) => return Err(TestCaseError::fail(format!("{text:?} does not reparse: {e}"))),
        };
        prop_assert_eq!(&reparsed, &stmt, "canonical text {:?}", text);
        prop_assert_eq!(leads_with_select(&text), stmt.is_select());
        prop_assert_eq!(reparsed.unparse(), text);
    }

    #[test]
    fn empty_policy_normalization_is_the_canonical_text(stmt in statement()) {
        let empty = NormalizationPolicy::empty();
        match (&stmt, normalize(&stmt, &empty)) {
            // no column list means no column/value correspondence to mask by
            (Statement::Insert(i), got) if i.columns.is_none() => prop_assert!(got.is_err()),
            (_, got) => prop_assert_eq!(got.unwrap(), stmt.unparse()),
        }
    }

    #[test]
    fn flagged_insert_divergence_masks_away(
        table in ident(),
        pairs in prop::collection::vec((ident(), literal()), 1..4),
        pick in any::<prop::sample::Index>(),
        replacement in literal(),
    ) {
        let (columns, values): (Vec<Ident>, Vec<Literal>) = pairs.into_iter().unzip();
        let i = pick.index(values.len());
        let mut other = values.clone();
        other[i] = replacement.clone();
        let build = |values: Vec<Literal>| {
            Statement::Insert(Insert {
                table: table.clone(),
                columns: Some(columns.clone()),
                source: InsertSource::Values(values),
            })
        };
        let honest = build(values.clone());
        let divergent = build(other);

        let policy = NormalizationPolicy::with_flags(&[(table.0.as_str(), columns[i].0.as_str())]);
        prop_assert_eq!(
            normalize(&honest, &policy).unwrap(),
            normalize(&divergent, &policy).unwrap()
        );
        // without the flag the divergence must stay visible to the vote
        if values[i] != replacement {
            let empty = NormalizationPolicy::empty();
            prop_assert_ne!(
                normalize(&honest, &empty).unwrap(),
                normalize(&divergent, &empty).unwrap()
            );
        }
    }

    #[test]
    fn flagged_update_divergence_masks_away(
        table in ident(),
        pairs in prop::collection::vec((ident(), literal()), 1..4),
        conditions in prop::collection::vec(condition(), 0..2),
        pick in any::<prop::sample::Index>(),
        replacement in literal(),
    ) {
        let i = pick.index(pairs.len());
        let build = |pairs: &[(Ident, Literal)]| {
            Statement::Update(Update {
                table: table.clone(),
                assignments: pairs
                    .iter()
                    .map(|(column, value)| Assignment {
                        column: column.clone(),
                        value: AssignValue::Literal(value.clone()),
                    })
                    .collect(),
                where_clause: conditions.clone(),
            })
        };
        let honest = build(&pairs);
        let mut changed = pairs.clone();
        changed[i].1 = replacement.clone();
        let divergent = build(&changed);

        let policy = NormalizationPolicy::with_flags(&[(table.0.as_str(), pairs[i].0 .0.as_str())]);
        prop_assert_eq!(
            normalize(&honest, &policy).unwrap(),
            normalize(&divergent, &policy).unwrap()
        );
        if pairs[i].1 != replacement {
            let empty = NormalizationPolicy::empty();
            prop_assert_ne!(
                normalize(&honest, &empty).unwrap(),
                normalize(&divergent, &empty).unwrap()
            );
        }
    }
}

// --- tag codec and verification ---

proptest! {
    #[test]
    fn option_codec_is_a_bijection(id in any::<u32>(), mac in any::<[u8; 32]>()) {
        let tag = RequestTag { id, mac };
        let block = encode_option(&tag);
        prop_assert_eq!(&block[..4], &[68, 40, 41, 0]);
        prop_assert_eq!(decode_option(&block).unwrap(), tag);
        // any header damage is rejected outright
        for byte in 0..4 {
            let mut bad = block;
            bad[byte] ^= 0x10;
            prop_assert!(decode_option(&bad).is_err());
        }
        prop_assert!(decode_option(&block[..block.len() - 1]).is_err());
    }

    #[test]
    fn verification_classifies_age_exactly(
        key_bytes in any::<[u8; 32]>(),
        id in any::<u32>(),
        age in any::<u32>(),
        window in 1u32..,
        octets in prop::collection::vec(any::<[u8; 4]>(), 1..5),
    ) {
        let key = TagKey::new(key_bytes);
        let addresses: Vec<Ipv4Addr> = octets.into_iter().map(Ipv4Addr::from).collect();
        let tag = make_tag(&key, id, &addresses).unwrap();
        // counter = id + age, with wraparound: age alone decides the verdict
        let counter = id.wrapping_add(age);
        let expected = if age < window { TagCheck::Accept } else { TagCheck::RejectStale };
        prop_assert_eq!(verify_tag(&tag, &addresses, &key, counter, window), expected);
        prop_assert_eq!(id_in_window(id, counter, window), age < window);
    }

    #[test]
    fn verification_rejects_wrong_key_or_addresses(
        key_bytes in any::<[u8; 32]>(),
        other_key_bytes in any::<[u8; 32]>(),
        id in any::<u32>(),
        octets in prop::collection::vec(any::<[u8; 4]>(), 1..5),
        perturb in any::<prop::sample::Index>(),
    ) {
        let key = TagKey::new(key_bytes);
        let addresses: Vec<Ipv4Addr> = octets.into_iter().map(Ipv4Addr::from).collect();
        let tag = make_tag(&key, id, &addresses).unwrap();
        prop_assert_eq!(verify_tag(&tag, &addresses, &key, id, 1), TagCheck::Accept);

        if other_key_bytes != key_bytes {
            let other = TagKey::new(other_key_bytes);
            prop_assert_eq!(verify_tag(&tag, &addresses, &other, id, 1), TagCheck::RejectForged);
        }
        let mut moved = addresses.clone();
        let i = perturb.index(moved.len());
        let [a, b, c, d] = moved[i].octets();
        moved[i] = Ipv4Addr::new(a ^ 1, b, c, d);
        prop_assert_eq!(verify_tag(&tag, &moved, &key, id, 1), TagCheck::RejectForged);
    }
}

// --- fixed-point accrual ---

proptest! {
    #[test]
    fn fixed_micros_round_trip(micros in 0i64..) {
        prop_assert_eq!(Fixed::from_micros(micros).micros(), micros);
    }

    #[test]
    fn take_floor_splits_whole_from_fraction(micros in 0i64..=i64::MAX / 2) {
        let mut f = Fixed::from_micros(micros);
        let whole = f.take_floor();
        prop_assert_eq!(whole, (micros / 1_000_000) as u64);
        prop_assert_eq!(f.micros(), micros % 1_000_000);
    }

    #[test]
    fn rolling_sum_conserves_its_residue(
        step_micros in 0i64..=3_000_000,
        steps in 0usize..1500,
    ) {
        let mut sum = RollingSum::new(Fixed::from_micros(step_micros));
        let mut issued: u64 = 0;
        for _ in 0..steps {
            issued += sum.advance();
            let residue = sum.residue().micros();
            prop_assert!((0..1_000_000).contains(&residue));
        }
        // nothing invented, nothing lost: issued units plus residue is the sum
        prop_assert_eq!(
            issued as i64 * 1_000_000 + sum.residue().micros(),
            step_micros * steps as i64
        );
    }
}

// --- fleet math ---

proptest! {
    #[test]
    fn cleansing_never_exceeds_the_compromise_count(
        n in 1u32..=4,
        m in 1u32..=8,
        picks in prop::collection::vec((any::<u32>(), any::<u32>()), 0..40),
        drawn in 0u32..=40,
        seed in any::<u64>(),
    ) {
        let mut state = CompromiseState::new(n, m);
        for (pool, replica) in picks {
            state.compromise((pool % n) as usize, replica % m);
        }
        let before = state.total();
        prop_assert!(before <= n * m);
        prop_assert_eq!(state.counts().iter().sum::<u32>(), before);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hits = sample_cleanse(&mut state, drawn, &mut rng);
        prop_assert!(hits <= drawn.min(before));
        prop_assert_eq!(state.total(), before - hits);
        prop_assert_eq!(state.counts().iter().sum::<u32>(), state.total());
        if drawn >= n * m {
            prop_assert_eq!(hits, before);
            prop_assert_eq!(state.total(), 0);
        }
        let gamma = state.gamma();
        prop_assert!((0.0..=1.0).contains(&gamma));
    }

    #[test]
    fn the_balanced_bound_dominates_every_split(
        m in 1u32..=30,
        raw_counts in prop::collection::vec(0u32..=30, 1..6),
    ) {
        let counts: Vec<u32> = raw_counts.iter().map(|&c| c.min(m)).collect();
        let n = counts.len() as u32;
        let c: u32 = counts.iter().sum();
        prop_assert!(p_success(&counts, m) <= p_success_bound(c, n, m) + 1e-12);
    }

    #[test]
    fn a_free_adversary_stays_balanced_and_meets_the_bound(
        n in 1u32..=5,
        m in 1u32..=8,
        raw_steps in 0u32..=40,
    ) {
        let steps = raw_steps.min(n * m);
        let mut state = CompromiseState::new(n, m);
        for _ in 0..steps {
            // unconstrained greedy: always fill the emptiest pool
            let pool = (0..n as usize).min_by_key(|&p| state.counts()[p]).unwrap();
            let replica =
                (0..m).find(|&r| !state.is_compromised(pool, r)).expect("emptiest pool has room");
            prop_assert!(state.compromise(pool, replica));

            let counts = state.counts();
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            prop_assert!(spread <= 1);
            let p = p_success(counts, m);
            let bound = p_success_bound(state.total(), n, m);
            prop_assert!(p <= bound + 1e-12);
            if state.total().is_multiple_of(n) {
                // the bound is tight exactly on even splits
                prop_assert!((p - bound).abs() <= bound * 1e-9);
            }
        }
    }

    #[test]
    fn miss_probability_is_monotone(
        total in 1u32..=64,
        raw_c in 0u32..=64,
        raw_b in 0u32..=64,
    ) {
        let c = raw_c.min(total);
        let b = raw_b.min(total);
        let p = cleanse_zero_exact(c, b, total);
        prop_assert!((0.0..=1.0).contains(&p));
        if b < total {
            prop_assert!(cleanse_zero_exact(c, b + 1, total) <= p + 1e-12);
        }
        if c < total {
            prop_assert!(cleanse_zero_exact(c + 1, b, total) <= p + 1e-12);
        }
    }

    #[test]
    fn quantiles_interpolate_between_extremes(
        mut xs in prop::collection::vec(-1.0e9f64..1.0e9, 1..60),
        p in 0.0f64..=1.0,
        q in 0.0f64..=1.0,
    ) {
        xs.sort_unstable_by(f64::total_cmp);
        let first = xs[0];
        let last = xs[xs.len() - 1];
        let eps = (last - first) * 1e-12 + 1e-12;
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let vlo = quantile(&xs, lo);
        let vhi = quantile(&xs, hi);
        prop_assert!(vlo <= vhi + eps);
        prop_assert!(first - eps <= vlo && vhi <= last + eps);
        prop_assert_eq!(quantile(&xs, 0.0), first);
        prop_assert_eq!(quantile(&xs, 1.0), last);
    }
}

// --- trial floor and scheduler accounting (heavier, fewer cases) ---

#[derive(Debug, Clone)]
enum Op {
    Admit,
    Complete(usize),
    Cancel(usize),
    Advance(u16),
    Refresh,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => Just(Op::Admit),
        3 => any::<usize>().prop_map(Op::Complete),
        2 => any::<usize>().prop_map(Op::Cancel),
        2 => (0u16..=2000).prop_map(Op::Advance),
        1 => Just(Op::Refresh),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn a_win_takes_more_requests_than_pools(
        n in 1u32..=4,
        m in 2u32..=6,
        b_micros in 0i64..=1_500_000,
        seed in any::<u64>(),
    ) {
        let params =
            SimParams { n, m, b: Fixed::from_micros(b_micros), trials: 1, seed };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // the first request sees a clean fleet and each one compromises at
        // most a single replica, so a win needs n earlier requests
        prop_assert!(run_trial(&params, &mut rng) > n as u64);
    }

    #[test]
    fn request_accounting_survives_random_operations(
        n in 1u32..=3,
        m in 1u32..=4,
        k_micros in 0i64..=2_000_000,
        refresh_duration in 1u64..=100,
        deferred_timeout in 1u64..=2000,
        seed in any::<u64>(),
        ops in prop::collection::vec(op(), 0..80),
    ) {
        let config = SystemConfig {
            refresh_duration,
            deferred_timeout,
            ..SystemConfig::new(n, m, Fixed::from_micros(k_micros))
        };
        let mut sched = Scheduler::new(config, TagKey::new([7u8; 32]), seed).unwrap();
        let mut open: Vec<u32> = Vec::new();
        let mut now = 0u64;
        for op in ops {
            match op {
                Op::Advance(dt) => {
                    now += dt as u64;
                    let report = sched.tick(now);
                    for id in &report.aborted {
                        open.retain(|x| x != id);
                    }
                }
                Op::Refresh => {
                    sched.accumulate_refresh(now);
                }
                Op::Admit => {
                    if let Ok(admission) = sched.admit(now) {
                        prop_assert_eq!(admission.addresses.len(), n as usize);
                        open.push(admission.id);
                    }
                }
                Op::Complete(raw) => {
                    if open.is_empty() {
                        let ghost = 1_000_000 + raw as u32 % 1000;
                        prop_assert_eq!(
                            sched.complete(ghost, now),
                            Err(SchedulerError::UnknownRequest(ghost))
                        );
                    } else {
                        let id = open.remove(raw % open.len());
                        sched.complete(id, now).unwrap();
                    }
                }
                Op::Cancel(raw) => {
                    if !open.is_empty() {
                        let id = open.remove(raw % open.len());
                        sched.cancel(id, now).unwrap();
                    }
                }
            }
            let c = sched.counters();
            prop_assert_eq!(c.admitted, c.completed + c.aborted + open.len() as u64);
            prop_assert_eq!(sched.in_flight_requests(), open.len());
            prop_assert!(c.marks_applied <= c.marks_issued);
        }
        for id in open.drain(..) {
            sched.cancel(id, now).unwrap();
        }
        let c = sched.counters();
        prop_assert_eq!(c.admitted, c.completed + c.aborted);
        prop_assert_eq!(sched.in_flight_requests(), 0);
    }
}
