use mcd_core::mirp::{propose, MirpConfig};
use mcd_core::synth::{generate, write_corpus, SynthConfig};

#[test]
fn every_planted_cell_has_a_proposal_at_lambda_point_nine() {
    let cfg = SynthConfig::default();
    let samples = generate(&cfg, 100).unwrap();
    let mirp = MirpConfig::default().with_lambda(0.9);
    let mut cells = 0;
    for s in &samples {
        let boxes = propose(&s.image, &s.ac_mask_gt, &mirp).unwrap();
        for &(x, y) in &s.cells_gt.points {
            assert!(
                boxes.iter().any(|b| b.contains_point(x, y)),
                "{}: cell at ({x}, {y}) has no proposal",
                s.id
            );
            assert!(s.ac_mask_gt.contains_point(x, y));
        }
        cells += s.cells_gt.len();
    }
    assert!(cells > 100, "only {cells} cells planted");
}

#[test]
fn written_corpora_are_byte_identical() {
    let cfg = SynthConfig { seed: 9, ..SynthConfig::default() };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_corpus(d.path(), &cfg, &generate(&cfg, 3).unwrap()).unwrap();
    }
    let mut files: Vec<_> = walk(dirs[0].path());
    files.sort();
    assert!(files.len() >= 13);
    for rel in files {
        let a = std::fs::read(dirs[0].path().join(&rel)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&rel)).unwrap();
        assert!(a == b, "{} differs", rel.display());
    }
}

fn walk(root: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out
}
