// Builds an event stream, round-trips it through the binary format and
// slices it by time.

use std::error::Error;

use evyawn::event::{decode_events, write_events};
use evyawn::{Event, EventStream, Geometry, Polarity};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let geometry = Geometry::new(32, 24);
    let events: Vec<Event> = (0..1000u64)
        .map(|i| {
            let polarity = if i % 3 == 0 { Polarity::Off } else { Polarity::On };
            Event::new(i * 250, (i % 32) as u16, (i % 24) as u16, polarity)
        })
        .collect();
    let stream = EventStream::new(geometry, events)?;

    let mut bytes = Vec::new();
    write_events(&stream, &mut bytes)?;
    let back = decode_events(&bytes)?;
    assert_eq!(back, stream);

    let head = stream.slice_by_time(0, 50_000)?;
    let tail = stream.slice_by_time(50_000, u64::MAX)?;
    assert_eq!(head.len() + tail.len(), stream.len());
    assert_eq!(head.polarity_sum() + tail.polarity_sum(), stream.polarity_sum());
    println!(
        "{} events, {} bytes on disk, polarity sum {}, first half {} events",
        stream.len(),
        bytes.len(),
        stream.polarity_sum(),
        head.len()
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
