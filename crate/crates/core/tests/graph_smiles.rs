mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_molecule, random_permutation};
use vqsad::graph::{
    canonical_hash, check_valence, is_connected, read_dataset_str, write_dataset_string, AtomVocabulary,
    MolecularGraph,
};
use vqsad::smiles::{ingest_smi, ingest_smiles, parse_smiles, write_smiles};

fn molecule(seed: u64, n: usize, vocab: &AtomVocabulary) -> MolecularGraph {
    random_molecule(&mut ChaCha8Rng::seed_from_u64(seed), vocab, n)
}

#[test]
fn methane_record_has_five_atoms() {
    let v = AtomVocabulary::qm9();
    let gs = read_dataset_str(r#"{"atoms":["C","H","H","H","H"],"bonds":[[0,1,1],[0,2,1],[0,3,1],[0,4,1]],"property":null}"#, &v)
        .unwrap();
    assert_eq!(gs.len(), 1);
    assert_eq!(gs[0].n(), 5);
    assert!(check_valence(&gs[0], &v).unwrap());
    assert!(read_dataset_str("", &v).unwrap().is_empty());
}

#[test]
fn dataset_round_trip_is_bit_identical() {
    let v = AtomVocabulary::qm9();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let graphs: Vec<MolecularGraph> = (0..100)
        .map(|i| {
            let mut g = random_molecule(&mut rng, &v, 1 + i % 9);
            g.property = (i % 3 != 0).then_some(i as f64 * 0.37 - 4.0);
            g
        })
        .collect();
    let text = write_dataset_string(&graphs, &v).unwrap();
    let back = read_dataset_str(&text, &v).unwrap();
    assert_eq!(back, graphs);
    assert_eq!(write_dataset_string(&back, &v).unwrap(), text);
}

#[test]
fn malformed_records_name_their_line() {
    let v = AtomVocabulary::qm9();
    let good = r#"{"atoms":["C"],"bonds":[],"property":null}"#;
    for bad in [
        r#"{"atoms":["C","C"],"bonds":[[1,0,1]],"property":null}"#,
        r#"{"atoms":["C","C"],"bonds":[[0,1,4]],"property":null}"#,
        r#"{"atoms":["C","C"],"bonds":[[0,2,1]],"property":null}"#,
        r#"{"atoms":["Xe"],"bonds":[],"property":null}"#,
    ] {
        let e = read_dataset_str(&format!("{good}\n{bad}\n"), &v).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }
}

#[test]
fn valence_examples() {
    let v = AtomVocabulary::qm9();
    for s in ["C", "CC#N", "O=C=O", "C1CC1", "FC(F)(F)F"] {
        assert!(check_valence(&ingest_smiles(s, &v).unwrap(), &v).unwrap(), "{s}");
    }
    // five bonds on carbon
    let g = MolecularGraph::from_bonds(vec![1; 6], &[(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1), (0, 5, 1)]).unwrap();
    assert!(!check_valence(&g, &v).unwrap());
    let apart = MolecularGraph::from_bonds(vec![1, 1, 1], &[(0, 1, 1)]).unwrap();
    assert!(!is_connected(&apart));
    assert!(!check_valence(&apart, &v).unwrap());
}

#[test]
fn smiles_bond_rules() {
    let v = AtomVocabulary::zinc();
    let g = parse_smiles("C1CC(=O)C#N1", &v).unwrap();
    assert_eq!(g.n(), 6);
    assert_eq!(g.bond(0, 1), 1);
    assert_eq!(g.bond(2, 3), 2);
    assert_eq!(g.bond(4, 5), 3);
    assert_eq!(g.bond(5, 0), 1);
    assert_eq!(g.bond(2, 4), 1);
    for bad in ["", "C1CC", "C(C", "CC)", "[CH4]", "Cx", "C=", "c1ccccc1"] {
        assert!(parse_smiles(bad, &v).is_err(), "{bad:?}");
    }
}

#[test]
fn explicit_hydrogens_fill_valence() {
    let v = AtomVocabulary::qm9();
    let g = ingest_smiles("CC=O", &v).unwrap();
    assert_eq!(g.n(), 7);
    let h = v.hydrogen().unwrap();
    assert_eq!(g.atoms().iter().filter(|&&a| a == h).count(), 4);
    for i in 0..g.n() {
        assert_eq!(g.bond_order_sum(i), v.valence(g.atom(i)));
    }
}

#[test]
fn smi_ingest_collects_rejects() {
    let v = AtomVocabulary::qm9();
    let (gs, rej) = ingest_smi("# header\nCCO ethanol\n\nC(C\nN#N\n", &v);
    assert_eq!(gs.len(), 2);
    assert_eq!(rej.len(), 1);
    assert_eq!(rej[0].line, 4);
    assert_eq!(rej[0].smiles, "C(C");
}

#[test]
fn bundled_toy_set_ingests_cleanly() {
    let v = AtomVocabulary::qm9();
    let (gs, rej) = ingest_smi(include_str!("../data/qm9_toy.smi"), &v);
    assert!(rej.is_empty(), "{rej:?}");
    assert_eq!(gs.len(), 200);
    let h = v.hydrogen().unwrap();
    for g in &gs {
        assert!(check_valence(g, &v).unwrap());
        assert!(g.atoms().iter().filter(|&&a| a != h).count() <= 9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hash_and_valence_ignore_relabeling(seed in any::<u64>(), n in 1usize..12) {
        let v = AtomVocabulary::zinc();
        let g = molecule(seed, n, &v);
        let perm = random_permutation(&mut ChaCha8Rng::seed_from_u64(seed ^ 1), n);
        let h = g.permute(&perm);
        prop_assert_eq!(canonical_hash(&g), canonical_hash(&h));
        prop_assert_eq!(check_valence(&g, &v).unwrap(), check_valence(&h, &v).unwrap());
    }

    #[test]
    fn symmetric_zero_diagonal(seed in any::<u64>(), n in 1usize..12) {
        let g = molecule(seed, n, &AtomVocabulary::zinc());
        for i in 0..n {
            prop_assert_eq!(g.bond(i, i), 0);
            for j in 0..n {
                prop_assert_eq!(g.bond(i, j), g.bond(j, i));
                prop_assert!(g.bond(i, j) <= 3);
            }
        }
    }

    #[test]
    fn written_smiles_parse_back_isomorphic(seed in any::<u64>(), n in 1usize..10) {
        let v = AtomVocabulary::zinc();
        let g = molecule(seed, n, &v);
        let s = write_smiles(&g, &v).unwrap();
        let back = parse_smiles(&s, &v).unwrap();
        prop_assert_eq!(canonical_hash(&back), canonical_hash(&g), "{}", s);
    }

    #[test]
    fn different_bond_orders_hash_apart(seed in any::<u64>(), n in 2usize..10) {
        let v = AtomVocabulary::zinc();
        let g = molecule(seed, n, &v);
        let (i, j, o) = g.bond_list()[0];
        let mut h = g.clone();
        h.set_bond(i, j, if o == 1 { 2 } else { 1 }).unwrap();
        prop_assert_ne!(canonical_hash(&g), canonical_hash(&h));
    }
}
