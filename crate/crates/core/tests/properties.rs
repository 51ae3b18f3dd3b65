use std::path::Path;

use proptest::prelude::*;

use mara::agtree::{build_unbranched_trees, enumerate_branched_trees, GroupAllocator, SsmChannel};
use mara::asac::{
    apply_link_update, apply_over_reservation, compute_bov, compute_readjust_plan, Admission,
    BrvRule, ClassConfig, ClassId, CosState, CosTable, IngressPathView, Qspec,
};
use mara::mirap::{wire_size, Message};
use mara::scenario::ScenarioConfig;
use mara::topology::{
    random_topology, shortest_paths_oracle, InterfaceId, LinkId, NodeId, RandomTopologyParams,
};
use mara::workload::{generate, WorkloadConfig, WorkloadEvent};

fn state() -> impl Strategy<Value = CosState> {
    (0u64..50_000_000)
        .prop_flat_map(|mrth| (Just(mrth), 0..=mrth, 0..=mrth))
        .prop_flat_map(|(mrth, crth, brv)| (Just(mrth), Just(crth), Just(brv), 0..=brv))
        .prop_map(|(mrth, crth, brv, bu)| CosState {
            brv,
            bu,
            ..CosState::new(ClassId(0), crth, mrth)
        })
}

fn table() -> impl Strategy<Value = CosTable> {
    prop::collection::vec(state(), 2..5).prop_map(|mut classes| {
        for (i, c) in classes.iter_mut().enumerate() {
            c.class = ClassId(i as u8);
        }
        CosTable { classes }
    })
}

proptest! {
    #[test]
    fn surplus_sign_tracks_fit(c in state(), brq in 0u64..10_000_000) {
        let bov = compute_bov(&c, brq);
        let overflows = c.bu > 0 && c.bu + brq > c.mrth;
        prop_assert_eq!(bov < 0, overflows || c.mrth == 0);
    }

    #[test]
    fn grown_reservation_stays_under_ceiling(c in state(), brq in 0u64..10_000_000) {
        let bov = compute_bov(&c, brq);
        prop_assume!(bov >= 0);
        let next = apply_over_reservation(&c, bov, brq, BrvRule::Cumulative);
        prop_assert!(next.invariant_holds());
        if c.bu + brq <= c.mrth {
            prop_assert!(next.brv >= c.bu + brq);
        }
    }

    #[test]
    fn transfer_conserves_ceilings(mut t in table(), k in 0usize..4) {
        let k = ClassId((k % t.classes.len()) as u8);
        let before: u64 = t.classes.iter().map(|c| c.mrth).sum();
        let plan = compute_readjust_plan(&t, k).unwrap();
        plan.apply(&mut t).unwrap();
        prop_assert_eq!(before, t.classes.iter().map(|c| c.mrth).sum::<u64>());
        prop_assert!(t.classes.iter().all(|c| c.invariant_holds()));
    }

    #[test]
    fn admission_updates_apply_cleanly(t in table(), k in 0usize..4, brq in 1u64..5_000_000) {
        let class = ClassId((k % t.classes.len()) as u8);
        let mut view = IngressPathView::new();
        view.learn(LinkId(0), t.clone());
        let q = Qspec { class, brq };
        let updates = match view.admission_check(&[LinkId(0)], &q, BrvRule::Cumulative).unwrap() {
            Admission::NeedsAdjust(u) | Admission::NeedsReadjust(u) => u,
            _ => return Ok(()),
        };
        let mut live = t.clone();
        for u in &updates {
            apply_link_update(&mut live, u).unwrap();
        }
        let st = live.get(class).unwrap();
        prop_assert!(st.bu + brq <= st.brv);
        prop_assert_eq!(
            t.classes.iter().map(|c| c.mrth).sum::<u64>(),
            live.classes.iter().map(|c| c.mrth).sum::<u64>()
        );
    }

    #[test]
    fn wire_size_adds_objects(entries in 0usize..20, group in 1u32..1000) {
        let ch = SsmChannel { source: NodeId(0), group };
        let path: Vec<_> = (0..entries as u32).map(InterfaceId).collect();
        let m = Message::reserve_m(ch, path);
        prop_assert_eq!(wire_size(&m), 24 + 4 + 4 * entries + 8);
        prop_assert_eq!(wire_size(&Message::reserve_t(ch)), 32);
    }

    #[test]
    fn tree_count_grows_with_hop_cap(seed in 0u64..40) {
        let net = random_topology(12, seed, &RandomTopologyParams::default()).unwrap();
        let ingress = net.ingresses()[0];
        let paths = shortest_paths_oracle(&net, ingress).into_iter().collect();
        let mut alloc = GroupAllocator::new(ingress);
        let unbranched = build_unbranched_trees(&net, ingress, &paths, &mut alloc).unwrap();
        let counts: Vec<usize> = (1..=8)
            .map(|cap| enumerate_branched_trees(&net, &unbranched, Some(cap), &mut alloc).len())
            .collect();
        prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]));
        let uncapped = enumerate_branched_trees(&net, &unbranched, None, &mut alloc).len();
        prop_assert!(counts.last().unwrap() <= &uncapped);
    }

    #[test]
    fn workload_events_are_ordered(seed in 0u64..1000, n in 1usize..200) {
        let cfg = WorkloadConfig { session_count: n, seed, ..Default::default() };
        let classes = ClassConfig::defaults();
        let w = generate(&cfg, &classes, &[NodeId(1), NodeId(2), NodeId(3), NodeId(4)]).unwrap();
        prop_assert_eq!(w.events.len(), 2 * n);
        prop_assert!(w.events.windows(2).all(|p| p[0].time() <= p[1].time()));
        for r in &w.requests {
            let life = r.lifetime.as_secs_f64();
            prop_assert!((20.0..=120.0).contains(&life));
            prop_assert!((1..=3).contains(&r.egress_set.len()));
        }
        let arrivals = w.events.iter().filter(|e| matches!(e, WorkloadEvent::Arrival { .. })).count();
        prop_assert_eq!(arrivals, n);
    }
}

#[test]
fn fixture_scenarios_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    for name in ["default14.json", "scripted14.json", "two_node.json"] {
        let cfg = ScenarioConfig::from_path(&dir.join(name)).unwrap();
        cfg.load_network().unwrap();
    }
}
