// Records annotated synthetic sessions, cuts yawn and non-yawn sequences and
// splits them by subject.

use std::error::Error;

use evyawn::dataset::synth::{record_session, Session, SessionSpec};
use evyawn::dataset::{
    build_sequences, read_dataset, split_by_subject, write_dataset, Partition, SequenceConfig, SplitSpec,
};
use evyawn::simulator::SimulatorConfig;
use evyawn::Geometry;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let subjects = ["ann", "bob", "cyd", "dee"];
    let mut sequences = Vec::new();
    for (i, subject) in subjects.iter().enumerate() {
        let session = Session::generate(SessionSpec::new(*subject, 2, Geometry::new(32, 32), i as u64))?;
        let rec = record_session(&session, &SimulatorConfig::default())?;
        sequences.extend(build_sequences(&rec.stream, rec.end_us, &rec.annotations, &SequenceConfig::default())?);
    }

    let spec = SplitSpec::seeded(&subjects, [2, 1, 1], 3)?;
    let splits = split_by_subject(sequences, &spec)?;
    assert!(splits.is_subject_disjoint());
    println!("{splits}");

    let dir = tempfile::tempdir()?;
    write_dataset(dir.path(), splits.get(Partition::Test))?;
    assert_eq!(read_dataset(dir.path())?, splits.get(Partition::Test));
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
