//! Corpus BLEU with clipped n-gram precision and the brevity penalty.

use etlab::corpus::tokenize;
use etlab::metrics::{brevity_penalty, corpus_bleu, corpus_bleu_smoothed, modified_precision, running_average_last_k};

fn main() -> etlab::Result<()> {
    println!("clipped unigrams: {:?}", modified_precision(&tokenize("the the the the"), &tokenize("the cat the"), 1));
    println!("brevity penalty 3 vs 6: {:.6}", brevity_penalty(3, 6));
    let cases = [
        ("the cat sat", "the cat sat on the mat"),
        ("the cat sat on the mat", "the cat sat on the mat"),
        ("a man sees a ball in the park .", "the man sees a ball in the park ."),
        ("completely different words here", "the cat sat on the mat"),
    ];
    for (c, r) in cases {
        let (c, r) = (vec![tokenize(c)], vec![tokenize(r)]);
        println!("{:>8.4}  smoothed {:>8.4}  | {}", 100.0 * corpus_bleu(&c, &r, 4)?, 100.0 * corpus_bleu_smoothed(&c, &r, 4)?, c[0].join(" "));
    }
    let scores: Vec<f64> = (1..=250).map(|i| f64::from(i) / 10.0).collect();
    println!("average of the last 100 of 250 evaluations: {}", running_average_last_k(&scores, 100)?);
    Ok(())
}
