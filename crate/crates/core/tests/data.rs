mod common;

use rand::Rng;
use ssa2d::data::container::{decode, encode, NamedTensor};
use ssa2d::data::dataset::{clip_seed, generate_dataset};
use ssa2d::data::synth::generate_clip;
use ssa2d::{Dataset, SynthConfig, Tensor};

use common::rng;

#[test]
fn every_clip_satisfies_invariants() {
    let cfg = SynthConfig::default();
    let pairs = cfg.valid_pairs();
    for seed in 0..1000 {
        let clip = generate_clip(&cfg, seed).unwrap();
        if let Err(e) = clip.check_invariants(&pairs) {
            panic!("seed {seed}: {e}");
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = SynthConfig {
        actors: [2, 4],
        ..Default::default()
    };
    for seed in [0, 7, u64::MAX] {
        let a = generate_clip(&cfg, seed).unwrap();
        let b = generate_clip(&cfg, seed).unwrap();
        assert_eq!(a.video.data(), b.video.data());
        assert_eq!(a, b);
    }
}

/// Each actor's labelled region, found from labels alone inside the
/// actor's swept box, moves by its velocity every frame.
#[test]
fn centroids_follow_motion() {
    let cfg = SynthConfig::default();
    let [t_len, h, w] = cfg.frames();
    let mut checked = 0;
    for seed in 0..300 {
        let clip = generate_clip(&cfg, seed).unwrap();
        if clip.meta.overlapping {
            continue;
        }
        for a in &clip.meta.actors {
            let class = a.shape as i32;
            let mut prev: Option<(f64, f64)> = None;
            for t in 0..t_len {
                let (r0, c0) = a.corner(t);
                let (mut sr, mut sc, mut n) = (0.0, 0.0, 0.0);
                for r in r0..(r0 + a.size).min(h) {
                    for c in c0..(c0 + a.size).min(w) {
                        if clip.actor_gt[(t * h + r) * w + c] == class {
                            sr += r as f64;
                            sc += c as f64;
                            n += 1.0;
                        }
                    }
                }
                assert!(n > 0.0, "seed {seed}: actor vanished at frame {t}");
                let cur = (sr / n, sc / n);
                if let Some(p) = prev {
                    let (dr, dc) = a.motion.direction();
                    let v = a.speed as f64;
                    assert!((cur.0 - p.0 - dr as f64 * v).abs() <= 0.5, "seed {seed} frame {t}");
                    assert!((cur.1 - p.1 - dc as f64 * v).abs() <= 0.5, "seed {seed} frame {t}");
                }
                prev = Some(cur);
            }
            checked += 1;
        }
    }
    assert!(checked > 300);
}

#[test]
fn dataset_round_trip_and_batches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default();
    let ds = generate_dataset(&cfg, dir.path(), 5, 42).unwrap();
    assert_eq!(ds.len(), 5);

    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    for (i, line) in manifest.lines().enumerate() {
        assert_eq!(line, format!("{i:05} {}", clip_seed(42, i)));
    }

    let reopened = Dataset::open(dir.path()).unwrap();
    for i in 0..5 {
        let (got, want) = (reopened.load(i).unwrap(), generate_clip(&cfg, clip_seed(42, i)).unwrap());
        assert_eq!(got.meta.seed, want.meta.seed);
        assert_eq!(got.video, want.video);
        assert_eq!((got.actor_gt, got.action_gt, got.mask_gt), (want.actor_gt, want.action_gt, want.mask_gt));
    }
    let sizes: Vec<usize> = reopened.batches(2, Some(1)).map(|b| b.unwrap().len()).collect();
    assert_eq!(sizes, [2, 2, 1]);

    let mut seen: Vec<u64> = reopened
        .batches(2, Some(9))
        .flat_map(|b| b.unwrap())
        .map(|c| c.meta.seed)
        .collect();
    seen.sort_unstable();
    let mut want: Vec<u64> = (0..5).map(|i| clip_seed(42, i)).collect();
    want.sort_unstable();
    assert_eq!(seen, want);
}

#[test]
fn empty_dataset_has_manifest_only() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&SynthConfig::default(), dir.path(), 0, 1).unwrap();
    assert!(ds.is_empty());
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["manifest.txt"]);
}

#[test]
fn empty_container_is_header_only() {
    let buf = encode(&[]).unwrap();
    assert_eq!(buf.len(), 8);
    assert!(decode(&buf).unwrap().is_empty());
}

fn sample_container() -> Vec<u8> {
    let clip = generate_clip(&SynthConfig::default(), 5).unwrap();
    let mut tensors = clip.to_tensors();
    tensors.push(NamedTensor::float("extra", &Tensor::<f32>::from_fn(&[3, 2], |i| i as f32)));
    encode(&tensors).unwrap()
}

/// Bit flips, byte overwrites, truncation and splices. Decoding may fail
/// but must never panic.
#[test]
fn container_fuzz_never_panics() {
    let base = sample_container();
    let mut r = rng(77);
    let mut rejected = 0;
    for i in 0..1000 {
        let mut buf = base.clone();
        match i % 4 {
            0 => {
                for _ in 0..r.gen_range(1..8) {
                    let at = r.gen_range(0..buf.len());
                    buf[at] ^= 1 << r.gen_range(0..8);
                }
            }
            1 => {
                // Header region: counts, name lengths, dtypes, ranks and dims.
                let at = r.gen_range(0..buf.len().min(200));
                buf[at] = r.gen();
            }
            2 => buf.truncate(r.gen_range(0..buf.len())),
            _ => {
                let at = r.gen_range(0..buf.len());
                let junk: Vec<u8> = (0..r.gen_range(1..64)).map(|_| r.gen()).collect();
                buf.splice(at..at, junk);
            }
        }
        let outcome = std::panic::catch_unwind(|| decode(&buf));
        match outcome {
            Ok(Err(_)) => rejected += 1,
            Ok(Ok(_)) => {}
            Err(_) => panic!("decode panicked on mutation {i}"),
        }
    }
    assert!(rejected > 500, "only {rejected} mutations rejected");
}
