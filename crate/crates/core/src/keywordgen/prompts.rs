const SIMPLE: &str = include_str!("../../prompts/simple_keywords.txt");
const ITERATIVE: &str = include_str!("../../prompts/iterative_keywords.txt");

/// Number of counterfactual sets the bundled iterative prompt asks for.
pub const ITERATIVE_PROMPT_SETS: usize = 5;

/// Single-set keyword prompt, verbatim from `prompts/simple_keywords.txt`.
pub fn build_simple_prompt() -> String {
    SIMPLE.to_string()
}

/// Five-set progressive keyword prompt, verbatim from `prompts/iterative_keywords.txt`.
pub fn build_iterative_prompt() -> String {
    ITERATIVE.to_string()
}

fn number_word(n: usize) -> String {
    const WORDS: [&str; 11] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];
    WORDS.get(n).map(|w| w.to_string()).unwrap_or_else(|| n.to_string())
}

/// Prompt used to request `n` counterfactual sets.
///
/// `n == 1` uses the simple prompt and `n == 5` the bundled iterative prompt.
/// Other counts rewrite the set count and scaffold lines of the iterative one.
pub fn prompt_for_iterations(n: usize) -> String {
    match n {
        0 | 1 => build_simple_prompt(),
        ITERATIVE_PROMPT_SETS => build_iterative_prompt(),
        _ => {
            let (body, _) = ITERATIVE
                .split_once("Counterfactual Keywords 1:")
                .expect("iterative prompt carries numbered scaffolds");
            let mut out = body.replacen("generate five sets", &format!("generate {} sets", number_word(n)), 1);
            for i in 1..=n {
                out.push_str(&format!("Counterfactual Keywords {i}: [_, _, _, ...]\n"));
            }
            out
        }
    }
}
