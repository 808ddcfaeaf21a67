//! Dataset loading, synthetic data and input modalities.

use std::fs;
use std::path::Path;

use dstsa::skeleton::shrec::{TEST_INDEX, TRAIN_INDEX};
use dstsa::skeleton::synthetic::{decode_container, encode_container, load_container, save_container};
use dstsa::skeleton::{
    derive_bone, derive_motion, generate_synthetic, parse_shrec, reconstruct_from_bones, sample_indices, GraphSpec,
    ModalityKind, SampleMode,
};
use dstsa::Error;
use proptest::prelude::*;

fn write_sequence(root: &Path, gesture: u32, subject: u32, frames: usize, scale: f64) {
    let dir = root.join(format!("gesture_{gesture}/finger_1/subject_{subject}/essai_1"));
    fs::create_dir_all(&dir).unwrap();
    let lines: Vec<String> = (0..frames)
        .map(|t| {
            (0..66)
                .map(|i| format!("{:.4}", scale * (i as f64 * 0.01 + t as f64 * 0.1)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    fs::write(dir.join("skeletons_world.txt"), lines.join("\n")).unwrap();
}

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_sequence(dir.path(), 1, 1, 5, 1.0);
    write_sequence(dir.path(), 3, 2, 7, -1.0);
    fs::write(dir.path().join(TRAIN_INDEX), "1 1 1 1 1 1 5\n\n3 1 2 1 3 5 7\n").unwrap();
    fs::write(dir.path().join(TEST_INDEX), "3 1 2 1 3 6 7\n").unwrap();
    dir
}

#[test]
fn shrec_layout_loads_with_zero_based_labels() {
    let dir = fixture();
    let train = parse_shrec(dir.path(), TRAIN_INDEX).unwrap();
    assert_eq!(train.len(), 2);
    assert_eq!(train[0].coords.shape(), &[3, 5, 22]);
    assert_eq!((train[1].label14, train[1].label28, train[1].subject), (2, 4, 2));
    // joint 1, frame 2, y coordinate is value 3*1+1 on line 3
    assert!((train[0].coords.at(&[1, 2, 1]) - (0.04 + 0.2)).abs() < 1e-9);
    let test = parse_shrec(dir.path(), TEST_INDEX).unwrap();
    assert_eq!(test[0].label28, 5);
}

#[test]
fn frame_count_mismatch_is_an_integrity_error() {
    let dir = fixture();
    fs::write(dir.path().join(TRAIN_INDEX), "1 1 1 1 1 1 6\n").unwrap();
    assert!(matches!(parse_shrec(dir.path(), TRAIN_INDEX), Err(Error::Integrity(_))));
}

#[test]
fn malformed_files_report_the_line() {
    let dir = fixture();
    fs::write(dir.path().join(TRAIN_INDEX), "1 1 1 1 1 1 5\n1 1 x 1 1 1 5\n").unwrap();
    match parse_shrec(dir.path(), TRAIN_INDEX) {
        Err(Error::Format { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let path = dir.path().join("gesture_1/finger_1/subject_1/essai_1/skeletons_world.txt");
    fs::write(&path, "1 2 3\n").unwrap();
    fs::write(dir.path().join(TRAIN_INDEX), "1 1 1 1 1 1 1\n").unwrap();
    assert!(matches!(parse_shrec(dir.path(), TRAIN_INDEX), Err(Error::Format { line: 1, .. })));
}

#[test]
fn missing_sequence_file_is_an_io_error() {
    let dir = fixture();
    fs::write(dir.path().join(TRAIN_INDEX), "9 1 1 1 1 1 5\n").unwrap();
    let err = parse_shrec(dir.path(), TRAIN_INDEX).unwrap_err();
    assert!(err.to_string().contains("gesture_9"), "{err}");
}

#[test]
fn container_round_trips_exactly() {
    let seqs = generate_synthetic(3, 2, 9, 11, 4).unwrap();
    let bytes = encode_container(&seqs).unwrap();
    assert_eq!(decode_container(&bytes).unwrap(), seqs);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.bin");
    save_container(&path, &seqs).unwrap();
    assert_eq!(load_container(&path).unwrap(), seqs);
    // truncation and corruption are detected
    assert!(decode_container(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(decode_container(&bad).is_err());
}

#[test]
fn synthetic_set_is_balanced_and_seeded() {
    let a = generate_synthetic(4, 16, 22, 30, 7).unwrap();
    let b = generate_synthetic(4, 16, 22, 30, 7).unwrap();
    let c = generate_synthetic(4, 16, 22, 30, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), 64);
    for class in 0..4 {
        assert_eq!(a.iter().filter(|s| s.label14 == class).count(), 16);
    }
    assert!(a.iter().all(|s| s.coords.shape() == [3, 30, 22]));
}

#[test]
fn synthetic_classes_differ_in_motion_not_in_mean_pose() {
    let seqs = generate_synthetic(4, 16, 22, 30, 1).unwrap();
    let graph = GraphSpec::hand22();
    // per class: mean pose and mean per-joint motion energy
    let mut pose = vec![vec![0.0; 66]; 4];
    let mut energy = vec![vec![0.0; 22]; 4];
    for s in &seqs {
        let m = derive_motion(&s.coords).unwrap();
        for c in 0..3 {
            for j in 0..22 {
                let frames = (0..30).map(|t| s.coords.at(&[c, t, j]));
                pose[s.label14][c * 22 + j] += frames.sum::<f64>() / 30.0 / 16.0;
                energy[s.label14][j] += (1..30).map(|t| m.at(&[c, t, j]).powi(2)).sum::<f64>();
            }
        }
    }
    let pose_gap = (1..4)
        .map(|k| pose[0].iter().zip(&pose[k]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    assert!(pose_gap < 0.02, "mean poses differ by {pose_gap}");
    let busiest: Vec<usize> = energy
        .iter()
        .map(|e| (0..22).max_by(|&i, &j| e[i].total_cmp(&e[j])).unwrap())
        .collect();
    let mut distinct = busiest.clone();
    distinct.sort_unstable();
    distinct.dedup();
    assert_eq!(distinct.len(), 4, "busiest joint per class {busiest:?}");
    assert_eq!(graph.joint_count(), 22);
}

#[test]
fn modalities_have_the_documented_structure() {
    let seq = &generate_synthetic(2, 1, 22, 10, 3).unwrap()[0];
    let graph = GraphSpec::hand22();
    let joint = ModalityKind::Joint.derive(seq, &graph).unwrap();
    let bone = ModalityKind::Bone.derive(seq, &graph).unwrap();
    let jm = ModalityKind::JointMotion.derive(seq, &graph).unwrap();
    let bm = ModalityKind::BoneMotion.derive(seq, &graph).unwrap();
    assert_eq!(joint, seq.coords);
    for c in 0..3 {
        for t in 0..10 {
            assert_eq!(bone.at(&[c, t, graph.root()]), 0.0);
            for j in 0..22 {
                if let Some(p) = graph.parent(j) {
                    let want = seq.coords.at(&[c, t, j]) - seq.coords.at(&[c, t, p]);
                    assert!((bone.at(&[c, t, j]) - want).abs() < 1e-15);
                }
                if t == 0 {
                    assert_eq!(jm.at(&[c, 0, j]), 0.0);
                } else {
                    let want = bone.at(&[c, t, j]) - bone.at(&[c, t - 1, j]);
                    assert!((bm.at(&[c, t, j]) - want).abs() < 1e-15);
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn bones_reconstruct_joints(seed in 0u64..500, t in 2usize..6) {
        let seq = &generate_synthetic(2, 1, 22, t, seed).unwrap()[0];
        let graph = GraphSpec::hand22();
        let bones = derive_bone(&seq.coords, &graph).unwrap();
        let root: Vec<f64> = (0..3).flat_map(|c| (0..t).map(move |ti| (c, ti))).map(|(c, ti)| seq.coords.at(&[c, ti, graph.root()])).collect();
        let back = reconstruct_from_bones(&bones, &root, &graph);
        prop_assert!(back.max_abs_diff(&seq.coords) < 1e-12);
    }

    #[test]
    fn sampled_indices_are_sorted_and_in_range(t in 1usize..400, target in 1usize..160, seed in any::<u64>()) {
        for mode in [SampleMode::Uniform, SampleMode::Random] {
            let idx = sample_indices(t, target, mode, seed);
            prop_assert_eq!(idx.len(), target);
            prop_assert!(idx.iter().all(|&i| i < t));
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            if target <= t {
                // one draw per bin never repeats a frame
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]), "{:?} {:?}", mode, idx);
            }
        }
        let uniform = sample_indices(t, target, SampleMode::Uniform, 0);
        prop_assert_eq!(uniform[0], 0);
        if target > 1 {
            prop_assert_eq!(*uniform.last().unwrap(), t - 1);
        }
    }
}
