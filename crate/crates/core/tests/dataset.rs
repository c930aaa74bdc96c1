use std::fs;
use std::path::Path;

use cxrnet::dataset::{
    balance, class_centroids, generate_synthetic, ingest, load_batch, load_image, nearest_centroid, split,
    split_table, ChannelPolicy, DatasetManifest, Split, SplitSpec, SYNTHETIC_CLASSES,
};
use cxrnet::Error;

fn write_png(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) {
    image::RgbImage::from_fn(w, h, |x, y| image::Rgb(f(x, y))).save(path).unwrap();
}

fn ratio_spec(seed: u64) -> SplitSpec {
    SplitSpec::Ratios {
        test_fraction: 0.2,
        validation_fraction_of_trainval: 0.2,
        seed,
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for class in SYNTHETIC_CLASSES {
        let mut names: Vec<_> = fs::read_dir(dir.join(class)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn synthetic_corpus_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(generate_synthetic(100, 32, 10, a.path()).unwrap(), 300);
    generate_synthetic(100, 32, 10, b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 300);
    assert_eq!(fa, fb);

    let c = tempfile::tempdir().unwrap();
    generate_synthetic(100, 32, 11, c.path()).unwrap();
    assert_ne!(fa, files(c.path()));
}

#[test]
fn synthetic_corpus_is_separable_by_centroids() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(100, 32, 10, dir.path()).unwrap();
    let (manifest, summary) = ingest(dir.path()).unwrap();
    assert_eq!((summary.accepted, summary.skipped.len()), (300, 0));
    assert_eq!(manifest.class_names, SYNTHETIC_CLASSES);
    let manifest = split(&manifest, &ratio_spec(10)).unwrap();

    let load = |s| {
        let recs = manifest.records_in(s);
        let images: Vec<_> = recs.iter().map(|r| load_image(&r.path, 32, ChannelPolicy::Gray1).unwrap()).collect();
        let labels: Vec<usize> = recs.iter().map(|r| manifest.class_index(&r.label).unwrap()).collect();
        (images, labels)
    };
    let (train_x, train_y) = load(Split::Train);
    let (test_x, test_y) = load(Split::Test);
    let centroids = class_centroids(&train_x, &train_y, 3);
    let correct = test_x.iter().zip(&test_y).filter(|(x, &y)| nearest_centroid(x, &centroids) == y).count();
    let acc = correct as f64 / test_y.len() as f64;
    assert!(acc > 0.9, "{acc}");
}

#[test]
fn ratio_split_of_the_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(100, 16, 10, dir.path()).unwrap();
    let (m, _) = ingest(dir.path()).unwrap();
    let m = split(&balance(&m, 10).unwrap(), &ratio_spec(10)).unwrap();
    for s in [Split::Train, Split::Validation, Split::Test] {
        let expected = match s {
            Split::Train => 64,
            Split::Validation => 16,
            _ => 20,
        };
        assert_eq!(m.split_counts(s), [expected; 3]);
    }
    let table = split_table(&m);
    assert_eq!(table[&("COVID".to_string(), Split::Test)], 20);
    assert_eq!(m, split(&m, &ratio_spec(10)).unwrap());
    assert_ne!(m, split(&m, &ratio_spec(11)).unwrap());
}

#[test]
fn manifest_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(3, 8, 0, dir.path()).unwrap();
    let (m, _) = ingest(dir.path()).unwrap();
    let m = split(
        &m,
        &SplitSpec::Counts {
            train: 1,
            validation: 1,
            test: 1,
            seed: 0,
        },
    )
    .unwrap();
    let path = dir.path().join("manifest.json");
    m.save(&path).unwrap();
    assert_eq!(DatasetManifest::load(&path).unwrap(), m);
}

#[test]
fn empty_root_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(ingest(dir.path()), Err(Error::Dataset(_))));
    fs::create_dir(dir.path().join("empty_class")).unwrap();
    assert!(matches!(ingest(dir.path()), Err(Error::Dataset(_))));
    assert!(ingest(&dir.path().join("missing")).is_err());
}

#[test]
fn single_image_corpus() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("only")).unwrap();
    write_png(&dir.path().join("only/a.png"), 5, 7, |_, _| [10, 20, 30]);
    let (m, s) = ingest(dir.path()).unwrap();
    assert_eq!((m.records.len(), s.accepted), (1, 1));
    assert_eq!(balance(&m, 0).unwrap(), m);
    let (x, y) = load_batch(&m, &m.records.iter().collect::<Vec<_>>(), 4, ChannelPolicy::Gray1).unwrap();
    assert_eq!(x.shape(), [1, 4, 4, 1]);
    assert_eq!(y.data(), [1.0]);
}

#[test]
fn unreadable_files_are_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("a")).unwrap();
    write_png(&dir.path().join("a/good.png"), 4, 4, |_, _| [0, 0, 0]);
    fs::write(dir.path().join("a/broken.png"), b"not an image").unwrap();
    fs::write(dir.path().join("a/notes.txt"), b"ignored").unwrap();
    let (m, s) = ingest(dir.path()).unwrap();
    assert_eq!(m.records.len(), 1);
    assert_eq!(s.skipped, [dir.path().join("a/broken.png")]);
}

#[test]
fn corrupt_image_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.jpg");
    fs::write(&path, [0xff, 0xd8, 0xff, 0x00, 0x01]).unwrap();
    let err = load_image(&path, 8, ChannelPolicy::Gray1).unwrap_err();
    assert!(err.to_string().contains("broken.jpg"), "{err}");
}

#[test]
fn replicated_channels_are_identical_and_white_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    write_png(&path, 8, 8, |x, y| if x < 4 { [255, 255, 255] } else { [(y * 30) as u8, 0, 200] });
    let img = load_image(&path, 8, ChannelPolicy::Replicate3).unwrap();
    assert_eq!(img.shape(), [8, 8, 3]);
    for px in img.data().chunks(3) {
        assert!(px[0] == px[1] && px[1] == px[2]);
    }
    assert_eq!(img.data()[0], 1.0);
    let gray = load_image(&path, 8, ChannelPolicy::Gray1).unwrap();
    assert_eq!(gray.shape(), [8, 8, 1]);
    assert_eq!(gray.data(), img.data().iter().step_by(3).copied().collect::<Vec<_>>());
}

#[test]
fn balance_keeps_order_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    for (class, n) in [("a", 5), ("b", 3)] {
        fs::create_dir(dir.path().join(class)).unwrap();
        for i in 0..n {
            write_png(&dir.path().join(format!("{class}/{i}.png")), 2, 2, |_, _| [i as u8; 3]);
        }
    }
    let (m, _) = ingest(dir.path()).unwrap();
    let b = balance(&m, 1).unwrap();
    assert_eq!(b.class_counts(), [3, 3]);
    let positions: Vec<usize> = b.records.iter().map(|r| m.records.iter().position(|x| x == r).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(b, balance(&m, 1).unwrap());
    let differs = (2..20).any(|s| balance(&m, s).unwrap() != b);
    assert!(differs);
}
