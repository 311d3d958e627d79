//! Generate a small fork dataset and write it as JSON lines.
//!
//!     cargo run --example generate_scenes -- [count] [path]

use modeseq::scenario::{generate_dataset, read_dataset, write_dataset, DatasetSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let path = args.next().unwrap_or_else(|| std::env::temp_dir().join("forks.jsonl").display().to_string());

    let scenes = generate_dataset(count, &DatasetSpec::default(), 42)?;
    write_dataset(&path, &scenes)?;
    assert_eq!(read_dataset(&path)?, scenes);

    for (i, s) in scenes.iter().enumerate().take(4) {
        let f = s.focal();
        let end = s.future.last().unwrap();
        println!(
            "scene {i}: {} agents, {} polylines, speed {:.1} m/s, branch {}, ends at ({:.1}, {:.1})",
            s.agents.len(),
            s.map.len(),
            f.last_speed(),
            s.latent_branch.index,
            end[0],
            end[1]
        );
    }
    println!("wrote {count} scenes to {path}");
    Ok(())
}
