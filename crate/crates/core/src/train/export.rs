use crate::model::ModelParams;
use crate::vocab::Tokenizer;

/// Character-embedding rows as `<char>\t<pinyin>\t<v1,...>` lines under a
/// header. Pinyin is the toneless syllable, or empty when unknown. Characters
/// outside the vocabulary are skipped.
pub fn export_embeddings(params: &ModelParams, tok: &Tokenizer, chars: &[char]) -> String {
    let table = params.get(params.layout.char_embed);
    let mut out = String::from("char\tpinyin\tvector\n");
    for &ch in chars {
        let Some(id) = tok.chars.id(ch) else {
            log::warn!("{ch} is not in the vocabulary; skipped");
            continue;
        };
        let pinyin = tok.dict.get(ch).map(|s| s.text.as_str()).unwrap_or("");
        let values: Vec<String> = table.row(id).iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&format!("{ch}\t{pinyin}\t{}\n", values.join(",")));
    }
    out
}
