//! Load sequences from a SHREC'17 style directory tree. A two-sequence tree
//! is written to a temporary directory first; point `parse_shrec` at a real
//! download to load the full set.

use std::fs;
use std::path::Path;

use dstsa::skeleton::parse_shrec;
use dstsa::skeleton::shrec::TRAIN_INDEX;

fn write_tree(root: &Path) -> std::io::Result<()> {
    // gesture finger subject essai label14 label28 frames
    fs::write(root.join(TRAIN_INDEX), "1 1 1 1 1 1 4\n5 2 3 1 5 10 6\n")?;
    for (gesture, finger, subject, frames) in [(1, 1, 1, 4), (5, 2, 3, 6)] {
        let dir = root.join(format!("gesture_{gesture}/finger_{finger}/subject_{subject}/essai_1"));
        fs::create_dir_all(&dir)?;
        let line = |t: usize| (0..66).map(|i| format!("{:.3}", 0.01 * i as f64 + 0.1 * t as f64)).collect::<Vec<_>>().join(" ");
        let text: Vec<String> = (0..frames).map(line).collect();
        fs::write(dir.join("skeletons_world.txt"), text.join("\n"))?;
    }
    Ok(())
}

pub fn run_example() -> dstsa::Result<()> {
    let root = std::env::temp_dir().join(format!("dstsa_shrec_{}", std::process::id()));
    fs::create_dir_all(&root).and_then(|_| write_tree(&root)).map_err(|e| dstsa::Error::Input(e.to_string()))?;
    let seqs = parse_shrec(&root, TRAIN_INDEX);
    let _ = fs::remove_dir_all(&root);
    for s in seqs? {
        println!(
            "frames {:>2}  joints {}  label14 {:>2}  label28 {:>2}  subject {}",
            s.frames(),
            s.joints(),
            s.label14,
            s.label28,
            s.subject
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
