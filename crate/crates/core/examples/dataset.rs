//! Generates Noise-and-Box images, standardizes them with training
//! statistics, and writes the binary and CSV forms.

use sor::noisebox::{export_csv, generate, load_dataset, save_dataset, Standardizer, IMAGE_SIZE};

fn main() -> sor::Result<()> {
    let train = generate(200, 0.1, 1)?;
    let test = generate(50, 0.1, 2)?;
    let positives = train.labels().iter().filter(|&&y| y == 1.0).count();
    println!("{positives} of {} training images contain a box", train.len());

    let first_positive = (0..train.len()).find(|&i| train.labels()[i] == 1.0).expect("some positive");
    let px = train.pixels(first_positive);
    for r in 0..IMAGE_SIZE {
        let line: String = (0..IMAGE_SIZE)
            .map(|c| if px[r * IMAGE_SIZE + c] == 1.0 { '#' } else { '.' })
            .collect();
        println!("{line}");
    }

    let std = Standardizer::fit(&train)?;
    println!("train mean {:.5} std {:.5}", std.mean, std.std);
    let test = std.apply(&test);
    let test_own = Standardizer::fit(&test)?;
    println!("test set scaled with train statistics: mean {:.4}, std {:.4}", test_own.mean, test_own.std);

    let dir = std::env::temp_dir().join("sor-dataset-example");
    std::fs::create_dir_all(&dir).map_err(|e| sor::SorError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let path = dir.join("train.nbx");
    save_dataset(&train, &path)?;
    assert_eq!(load_dataset(&path)?, train);
    let mut csv = Vec::new();
    export_csv(&test, &mut csv)?;
    println!("wrote {}; test CSV is {} bytes", path.display(), csv.len());
    Ok(())
}
