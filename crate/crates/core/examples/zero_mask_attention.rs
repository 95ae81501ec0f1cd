//! With the zero mask on, no token attends to itself: the diagonal of every
//! self-attention map is exactly 0 and each row still sums to 1.

use etlab::corpus::{tokenize, Batch, Vocabulary, BOS};
use etlab::model::{ModelConfig, TransformerModel};

fn main() -> etlab::Result<()> {
    let sentence = tokenize("i love you so much");
    let vocab = Vocabulary::build([sentence.as_slice()], 1)?;
    let ids = vocab.encode(&sentence, false);
    let base = ModelConfig { src_vocab: vocab.len(), tgt_vocab: vocab.len(), dropout: 0.0, ..ModelConfig::desk() };
    let mut tgt = vec![BOS];
    tgt.extend(&ids);
    for zero in [false, true] {
        let model = TransformerModel::build(&ModelConfig { zero_mask: zero, ..base.clone() }, 4)?;
        let b = Batch::from_decoder_rows(&[ids.clone()], &[tgt.clone()], None, zero)?;
        let maps = model.extract_attention(&b)?;
        let w = &maps.enc_self[0];
        let t = w.shape()[2];
        println!("zero_mask={zero}: encoder layer 0, head 0");
        for i in 0..t {
            let row = &w.data()[i * t..(i + 1) * t];
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            println!("  {:>5} | {}  sum {:.6}", sentence[i], cells.join(" "), row.iter().sum::<f64>());
        }
        let dec = &maps.dec_self[0];
        println!("  decoder position 0 keeps its only key: {:.3}", dec.data()[0]);
    }
    Ok(())
}
