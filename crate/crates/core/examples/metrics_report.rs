// Scores prediction lists and prints confusion matrices in the
// predicted-by-actual layout.

use std::error::Error;

use evyawn::dataset::Label;
use evyawn::train_eval::{Confusion, MetricsReport};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut pairs = Vec::new();
    for (predicted, actual, n) in [
        (Label::Yawn, Label::Yawn, 71),
        (Label::Yawn, Label::NonYawn, 3),
        (Label::NonYawn, Label::Yawn, 4),
        (Label::NonYawn, Label::NonYawn, 72),
    ] {
        pairs.extend(std::iter::repeat_n((predicted, actual), n));
    }
    let metrics = Confusion::from_pairs(pairs).metrics();
    let [p, r, f1] = metrics.percent_one_decimal();
    let empty = Confusion::from_pairs([]).metrics();
    println!("empty list: undefined {:?} reported as 0", empty.undefined);
    println!("{}", MetricsReport::new("test", &metrics).confusion_matrix);
    println!("precision {p}%  recall {r}%  F1 {f1}%");
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
