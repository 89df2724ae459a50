use diffnet_core::flux::FluxKind;
use diffnet_core::image::{read_pgm, write_pgm, Image2D};
use diffnet_core::network::{init_params, read_model, write_model, Arch, InitConfig, NetworkSpec, Sharing};
use diffnet_core::training::{generate_dataset, read_dataset, write_dataset, DatasetConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

#[test]
fn dataset_files_reload_exactly() {
    let cfg = DatasetConfig {
        n_train: 12,
        n_val: 4,
        n_test: 5,
        len: 40,
        seed: 8,
        ..DatasetConfig::default()
    };
    let data = generate_dataset(&cfg).unwrap();
    let dir = TempDir::new().unwrap();
    write_dataset(dir.path(), &data).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), data);
}

#[test]
fn model_files_reload_exactly() {
    let dir = TempDir::new().unwrap();
    for (i, arch) in Arch::ALL.into_iter().enumerate() {
        let spec = NetworkSpec::new(arch, 3, 2, Sharing::TimeDynamic, FluxKind::Charbonnier);
        let init = InitConfig {
            kernel_range: 0.7,
            ..InitConfig::default()
        };
        let params = init_params(&spec, &init, &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
        let path = dir.path().join(format!("{arch}.txt"));
        write_model(&path, &spec, &params).unwrap();
        assert_eq!(read_model(&path).unwrap(), (spec, params));
    }
}

#[test]
fn pgm_round_trip_rounds_and_clamps() {
    let img = Image2D::from_fn(5, 7, |y, x| (y * 60 + x * 9) as f64 - 20.4);
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("a.pgm");
    write_pgm(&path, &img).unwrap();
    let back = read_pgm(&path).unwrap();
    assert_eq!(back.shape(), (5, 7));
    for (a, b) in img.data().iter().zip(back.data()) {
        assert_eq!(*b, a.round().clamp(0.0, 255.0));
    }
}
