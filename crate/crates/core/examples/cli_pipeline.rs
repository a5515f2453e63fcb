// Drives the command-line front end through the whole pipeline on a tiny
// synthetic corpus.

use std::error::Error;

use evyawn::cli::main_with_args;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let root = dir.path();
    let config = root.join("config.toml");
    std::fs::write(
        &config,
        "seed = 5\n\
         [model]\ninput_size = 32\nextractor_channels = [4, 8]\nreduced_channels = 4\nkey_channels = 2\nhidden = 8\n\
         [train]\nepochs = 1\n\
         [synth]\nsize = 32\nsubjects = 3\ncycles = 1\nsplit = [1, 1, 1]\n",
    )?;
    let run = |args: &[&str]| -> Result<(), Box<dyn Error>> {
        let mut argv = vec!["evyawn".to_string(), "--config".into(), config.display().to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        match main_with_args(argv) {
            0 => Ok(()),
            code => Err(format!("{args:?} exited with {code}").into()),
        }
    };
    let p = |rel: &str| root.join(rel).display().to_string();

    run(&["--out", &p("synth"), "synth"])?;
    for s in ["subj000", "subj001", "subj002"] {
        let d = p(&format!("synth/{s}"));
        run(&["--out", &d, "simulate", "--raw", &format!("{d}/frames.u8"), "--sidecar", &format!("{d}/frames.json")])?;
    }
    run(&["--out", &p("ds"), "dataset", "--manifest", &p("synth/dataset.json")])?;
    run(&["--out", &p("run"), "train", "--data", &p("ds"), "--select-on", "valid"])?;
    run(&["--out", &p("eval"), "eval", "--checkpoint", &p("run/best.ckpt"), "--data", &p("ds/test"), "--name", "test"])?;
    run(&["--out", &p("frames"), "frame", "--events", &p("synth/subj000/events.evy"), "--frames", "3", "--render"])?;
    println!("{}", std::fs::read_to_string(root.join("eval/test_metrics.json"))?);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
