//! Saving and restoring encoder and policy parameters.

use anyhow::Result;
use facetune::encoding::checkpoint::{load_into_store, save_store};
use facetune::encoding::{EncoderConfig, HierarchicalEncoder};
use facetune::numerics::ParamStore;
use facetune::policy::ToyPolicy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let mut store = ParamStore::new();
    HierarchicalEncoder::new(&mut store, &EncoderConfig::default(), &mut rng)?;
    let path = dir.path().join("encoder.ftck");
    save_store(&store, &path)?;
    println!(
        "{}",
        std::fs::read_to_string(path.with_extension("ftck.manifest"))?
    );

    let mut fresh = ParamStore::new();
    HierarchicalEncoder::new(
        &mut fresh,
        &EncoderConfig::default(),
        &mut ChaCha8Rng::seed_from_u64(4),
    )?;
    load_into_store(&mut fresh, &path)?;
    let same = store
        .iter()
        .zip(fresh.iter())
        .all(|((_, a), (_, b))| a.value == b.value);
    println!("encoder restored exactly: {same}");

    let policy = ToyPolicy::random([4, 4, 4], 6, true, 1.0, &mut rng);
    let ppath = dir.path().join("policy.ftck");
    policy.save(&ppath)?;
    let mut back = ToyPolicy::zeros([4, 4, 4], 6, true);
    back.load(&ppath)?;
    println!("policy restored exactly: {}", back == policy);
    Ok(())
}
