// SPDX-License-Identifier: MIT OR Apache-2.0

//! Writes and reads back embedding dumps, modules and banks.
//!
//! ```bash
//! cargo run --example module_files
//! ```

use gloce::scenario::{Scenario, ScenarioSpec};
use gloce::{
    assemble, inspect, load_bank, read_dump, save_bank, write_dump, Config, GloceModule, ModuleBank,
};

fn main() -> gloce::Result<()> {
    let dir = std::env::temp_dir().join(format!("gloce-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let sc = Scenario::new(ScenarioSpec::default())?;

    let target = sc.target_set(0)?;
    let dump = dir.join("target_0.gemb");
    write_dump(&target, &dump)?;
    assert_eq!(read_dump(&dump)?, target);
    println!(
        "{}: {} bytes",
        dump.display(),
        std::fs::metadata(&dump)?.len()
    );

    let cfg = Config {
        d: sc.spec.dim,
        ..Config::default()
    };
    let module = assemble(
        "target_0",
        &target,
        &[sc.mapping_set()?],
        &[sc.surrogate_set()?],
        &[sc.anchor_set()?],
        &cfg,
    )?;
    let path = dir.join("target_0.glmod");
    module.save(&path)?;
    assert_eq!(GloceModule::load(&path)?, module);
    println!(
        "{}: {} bytes\n{}",
        path.display(),
        std::fs::metadata(&path)?.len(),
        inspect(&module)
    );

    let bank_path = dir.join("bank.glbk");
    save_bank(&ModuleBank::new(vec![module])?, &bank_path)?;
    println!(
        "{}: {:?}",
        bank_path.display(),
        load_bank(&bank_path)?.labels()
    );

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
