//! Prompt template files.
//!
//! A template file holds in-context examples, a line containing only `---`,
//! then the prompt text. Each example is an `Input:` line followed by the input
//! text and an `Output:` line followed by the expected output:
//!
//! ```text
//! Input:
//! The sky is blue. It is probably noon.
//! Output:
//! 1. D
//! 2. A
//! ---
//! Label each sub-sentence ...
//! {examples}
//! {numbered_subsentences}
//! ```
//!
//! `{examples}` is optional; without it the rendered examples are placed
//! before the prompt text.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_text: String,
    pub in_context_examples: Vec<Example>,
}

pub const EXAMPLES_PLACEHOLDER: &str = "examples";

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<PromptTemplate, String> {
        let text = text.replace("\r\n", "\n");
        let mut lines = text.lines();
        let mut head = Vec::new();
        let mut found = false;
        for line in lines.by_ref() {
            if line.trim_end() == "---" {
                found = true;
                break;
            }
            head.push(line);
        }
        if !found {
            // no examples section
            return Ok(PromptTemplate {
                template_text: text.trim_end_matches('\n').to_string(),
                in_context_examples: Vec::new(),
            });
        }
        let body: Vec<&str> = lines.collect();
        Ok(PromptTemplate {
            template_text: body.join("\n").trim_end_matches('\n').to_string(),
            in_context_examples: parse_examples(&head)?,
        })
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for ex in &self.in_context_examples {
            out.push_str("Input:\n");
            out.push_str(&ex.input);
            out.push_str("\nOutput:\n");
            out.push_str(&ex.output);
            out.push_str("\n\n");
        }
        out.push_str("---\n");
        out.push_str(&self.template_text);
        out.push('\n');
        out
    }

    /// Checks that each required placeholder occurs exactly once and
    /// `{examples}` at most once.
    pub fn check_placeholders(&self, required: &[&str]) -> Result<(), String> {
        for name in required {
            let n = count_placeholder(&self.template_text, name);
            if n != 1 {
                return Err(format!("placeholder {{{name}}} must appear exactly once, found {n}"));
            }
        }
        let n = count_placeholder(&self.template_text, EXAMPLES_PLACEHOLDER);
        if n > 1 {
            return Err(format!("placeholder {{examples}} may appear at most once, found {n}"));
        }
        Ok(())
    }

    /// Substitutes placeholders in one pass, so substituted values are never
    /// re-expanded.
    pub fn render(&self, examples: &str, vars: &[(&str, &str)]) -> String {
        let has_examples = count_placeholder(&self.template_text, EXAMPLES_PLACEHOLDER) > 0;
        let mut out = String::with_capacity(self.template_text.len() + examples.len());
        if !has_examples && !examples.is_empty() {
            out.push_str(examples);
            out.push_str("\n\n");
        }
        let mut rest = self.template_text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let replaced = after.find('}').and_then(|close| {
                let name = &after[..close];
                let value = if name == EXAMPLES_PLACEHOLDER {
                    Some(examples)
                } else {
                    vars.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
                };
                value.map(|v| (v, close))
            });
            match replaced {
                Some((value, close)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

fn count_placeholder(text: &str, name: &str) -> usize {
    text.matches(&format!("{{{name}}}")).count()
}

fn parse_examples(lines: &[&str]) -> Result<Vec<Example>, String> {
    enum Part {
        None,
        Input,
        Output,
    }
    let mut examples = Vec::new();
    let mut input: Vec<&str> = Vec::new();
    let mut output: Vec<&str> = Vec::new();
    let mut part = Part::None;

    let mut flush = |input: &mut Vec<&str>, output: &mut Vec<&str>, line_no: usize| -> Result<(), String> {
        let i = input.join("\n").trim().to_string();
        let o = output.join("\n").trim().to_string();
        if i.is_empty() || o.is_empty() {
            return Err(format!("example ending before line {line_no} needs both Input and Output"));
        }
        examples.push(Example { input: i, output: o });
        input.clear();
        output.clear();
        Ok(())
    };

    for (no, line) in lines.iter().enumerate() {
        match line.trim() {
            "Input:" => {
                if let Part::Output = part {
                    flush(&mut input, &mut output, no + 1)?;
                } else if let Part::Input = part {
                    return Err(format!("line {}: Input: without Output:", no + 1));
                }
                part = Part::Input;
            }
            "Output:" => match part {
                Part::Input => part = Part::Output,
                _ => return Err(format!("line {}: Output: without Input:", no + 1)),
            },
            t => match part {
                Part::Input => input.push(line),
                Part::Output => output.push(line),
                Part::None if t.is_empty() || t.starts_with('#') => {}
                Part::None => return Err(format!("line {}: text outside an example", no + 1)),
            },
        }
    }
    match part {
        Part::Output => flush(&mut input, &mut output, lines.len() + 1)?,
        Part::Input => return Err("last example lacks Output:".into()),
        Part::None => {}
    }
    Ok(examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_examples_and_body() {
        let t = PromptTemplate::parse(
            "# comment\nInput:\nA b.\nOutput:\n1. D\n\nInput:\nC d.\nOutput:\n1. A\n---\nDo it: {answer}\n",
        )
        .unwrap();
        assert_eq!(t.in_context_examples.len(), 2);
        assert_eq!(t.in_context_examples[1].output, "1. A");
        assert_eq!(t.template_text, "Do it: {answer}");
        assert_eq!(PromptTemplate::parse(&t.to_file_string()).unwrap(), t);
    }

    #[test]
    fn rejects_broken_examples() {
        assert!(PromptTemplate::parse("Output:\nx\n---\nbody").is_err());
        assert!(PromptTemplate::parse("Input:\nx\n---\nbody").is_err());
        assert!(PromptTemplate::parse("stray\n---\nbody").is_err());
    }

    #[test]
    fn placeholder_counts() {
        let t = PromptTemplate::parse("{a} and {a}").unwrap();
        assert!(t.check_placeholders(&["a"]).is_err());
        assert!(t.check_placeholders(&["b"]).is_err());
        let t = PromptTemplate::parse("{a} {examples}").unwrap();
        assert!(t.check_placeholders(&["a"]).is_ok());
    }

    #[test]
    fn render_is_single_pass() {
        let t = PromptTemplate::parse("X {a} Y {b} {unknown}").unwrap();
        let out = t.render("", &[("a", "{b}"), ("b", "2")]);
        assert_eq!(out, "X {b} Y 2 {unknown}");
        let out = t.render("EX", &[("a", "1"), ("b", "2")]);
        assert!(out.starts_with("EX\n\nX 1"));
    }
}
