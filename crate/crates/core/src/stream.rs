//! Stream CSV: header `p_0,…,p_{K-1},y_0,…,y_{K-1}`, probabilities with nine
//! decimals, labels as `0`/`1`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::set_functions::{LabelSet, Sample, MAX_CLASSES};

pub fn header(num_classes: usize) -> String {
    let p = (0..num_classes).map(|k| format!("p_{k}"));
    let y = (0..num_classes).map(|k| format!("y_{k}"));
    p.chain(y).collect::<Vec<_>>().join(",")
}

pub fn write_stream<W: Write>(mut out: W, samples: &[Sample]) -> Result<()> {
    let k = samples.first().map_or(0, Sample::num_classes);
    writeln!(out, "{}", header(k))?;
    let mut line = String::new();
    for (i, s) in samples.iter().enumerate() {
        if s.num_classes() != k {
            return Err(data_err(
                i as u64 + 2,
                format!("expected {k} classes, found {}", s.num_classes()),
            ));
        }
        line.clear();
        for p in &s.probs {
            line.push_str(&format!("{p:.9},"));
        }
        for c in 0..k {
            line.push(if s.labels.contains(c) { '1' } else { '0' });
            line.push(if c + 1 < k { ',' } else { '\n' });
        }
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn stream_to_string(samples: &[Sample]) -> Result<String> {
    let mut buf = Vec::new();
    write_stream(&mut buf, samples)?;
    Ok(String::from_utf8(buf).expect("ascii output"))
}

fn data_err(line: u64, message: impl Into<String>) -> Error {
    Error::Data {
        line,
        message: message.into(),
    }
}

/// Parses a stream; errors name the offending 1-based line.
pub fn read_stream<R: Read>(input: R) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| data_err(1, e.to_string()))?
        .clone();
    let width = headers.len();
    if width == 0 || width % 2 != 0 {
        return Err(data_err(1, format!("expected 2K columns, found {width}")));
    }
    let k = width / 2;
    if k > MAX_CLASSES {
        return Err(data_err(
            1,
            format!("{k} classes exceed the limit of {MAX_CLASSES}"),
        ));
    }
    let expected = header(k);
    let found = headers.iter().collect::<Vec<_>>().join(",");
    if found != expected {
        return Err(data_err(
            1,
            format!("expected header `{expected}`, found `{found}`"),
        ));
    }
    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            data_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(data_err(
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let mut probs = Vec::with_capacity(k);
        for (c, field) in record.iter().take(k).enumerate() {
            let p: f64 = field
                .parse()
                .map_err(|_| data_err(line, format!("bad probability `{field}` for class {c}")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(data_err(
                    line,
                    format!("probability {p} for class {c} outside [0, 1]"),
                ));
            }
            probs.push(p);
        }
        let mut labels = LabelSet::EMPTY;
        for (c, field) in record.iter().skip(k).enumerate() {
            match field {
                "0" => {}
                "1" => labels = labels.with(c),
                other => return Err(data_err(line, format!("bad label `{other}` for class {c}"))),
            }
        }
        samples.push(Sample { probs, labels });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GeneratorConfig};

    #[test]
    fn ten_rows_plus_header() {
        let samples = generate(&GeneratorConfig::new(3, 10, 1)).unwrap();
        let text = stream_to_string(&samples).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[0], "p_0,p_1,p_2,y_0,y_1,y_2");
        assert_eq!(lines[1].split(',').count(), 6);
        assert_eq!(text, stream_to_string(&samples).unwrap());
    }

    #[test]
    fn round_trip_to_nine_digits() {
        let samples = generate(&GeneratorConfig::new(6, 300, 2)).unwrap();
        let back = read_stream(stream_to_string(&samples).unwrap().as_bytes()).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.labels, b.labels);
            for (x, y) in a.probs.iter().zip(&b.probs) {
                assert!((x - y).abs() <= 5e-10);
            }
        }
        // a second round trip is exact
        let again = read_stream(stream_to_string(&back).unwrap().as_bytes()).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("p_0,p_1,y_0,y_1\n0.5,0.5,0,1\n0.5,1.5,0,0\n", 3),
            ("p_0,p_1,y_0,y_1\n0.5,abc,0,1\n", 2),
            ("p_0,p_1,y_0,y_1\n0.5,0.5,0,1\n0.1,0.2,0,2\n", 3),
            ("p_0,p_1,y_0,y_1\n0.5,0.5,0,1\n0.5,0.5,0,1\n0.5,0.5,0\n", 4),
            ("p_0,q_1,y_0,y_1\n0.5,0.5,0,1\n", 1),
            ("p_0,p_1,y_0\n", 1),
        ];
        for (text, want) in cases {
            match read_stream(text.as_bytes()) {
                Err(Error::Data { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn calibration_survives_round_trip() {
        let samples = generate(&GeneratorConfig::new(10, 10_000, 4)).unwrap();
        let back = read_stream(stream_to_string(&samples).unwrap().as_bytes()).unwrap();
        assert!(crate::synth::tests::decile_calibration_holds(&back));
    }
}
