//! Cycle-onset annotation: one sample index (at 1000 Hz) per line,
//! strictly increasing. Blank lines and `#` comments are ignored.

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: usize = line
            .parse()
            .map_err(|e| Error::format("onset file", format!("line {}: {line:?}: {e}", i + 1)))?;
        if out.last().is_some_and(|&prev| v <= prev) {
            return Err(Error::format(
                "onset file",
                format!("line {}: onsets must increase strictly", i + 1),
            ));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn render(onsets: &[usize]) -> String {
    onsets.iter().map(|o| format!("{o}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments() {
        assert_eq!(
            parse("# s1 onsets\n0\n\n812  # second\n1650\n").unwrap(),
            vec![0, 812, 1650]
        );
        assert_eq!(parse(&render(&[3, 9])).unwrap(), vec![3, 9]);
    }

    #[test]
    fn rejects_disorder_and_garbage() {
        assert!(parse("5\n5\n").is_err());
        assert!(parse("-1\n").is_err());
        assert!(parse("1.5\n").is_err());
    }
}
