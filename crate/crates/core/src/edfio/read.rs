//! EDF(+) reader: header parse, calibration to physical units, record
//! de-interleaving.

use super::format::{read_f64, read_i64, read_text};
use super::{digital_to_physical, Channel, EdfError, EdfHeader, PsgRecording, SignalHeader};
use std::io::Read;
use std::path::Path;

struct SignalLayout {
    header: SignalHeader,
    record_bytes: usize,
}

/// Read an EDF/EDF+ recording from any byte source. Signals are decoded to
/// physical units; "EDF Annotations" channels are skipped (their bytes are
/// still consumed). `num_records = -1` is resolved from the remaining length.
pub fn read_edf(mut source: impl Read) -> Result<PsgRecording, EdfError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    read_edf_bytes(&bytes)
}

pub fn read_edf_file(path: impl AsRef<Path>) -> Result<PsgRecording, EdfError> {
    read_edf(std::fs::File::open(path)?)
}

fn read_edf_bytes(bytes: &[u8]) -> Result<PsgRecording, EdfError> {
    if bytes.len() < 256 {
        return Err(EdfError::Truncated { region: "fixed 256-byte header".to_string() });
    }
    let version = read_text(bytes, 0, 8, "version")?;
    let patient_id = read_text(bytes, 8, 80, "patient_id")?;
    let recording_id = read_text(bytes, 88, 80, "recording_id")?;
    let start_date = read_text(bytes, 168, 8, "start_date")?;
    let start_time = read_text(bytes, 176, 8, "start_time")?;
    let header_bytes = read_i64(bytes, 184, 8, "header_bytes")?;
    let reserved = read_text(bytes, 192, 44, "reserved")?;
    let mut num_records = read_i64(bytes, 236, 8, "num_records")?;
    let record_duration_s = read_f64(bytes, 244, 8, "record_duration_s")?;
    let num_signals = read_i64(bytes, 252, 4, "num_signals")?;

    if num_signals < 1 {
        return Err(EdfError::InvalidField {
            field: "num_signals".to_string(),
            reason: format!("must be >= 1, got {num_signals}"),
        });
    }
    let ns = num_signals as usize;
    if record_duration_s <= 0.0 {
        return Err(EdfError::InvalidField {
            field: "record_duration_s".to_string(),
            reason: format!("must be > 0, got {record_duration_s}"),
        });
    }
    if num_records < -1 {
        return Err(EdfError::InvalidField {
            field: "num_records".to_string(),
            reason: format!("must be >= 0 or -1, got {num_records}"),
        });
    }
    let expected_header = 256 * (ns + 1);
    if header_bytes != expected_header as i64 {
        return Err(EdfError::InvalidField {
            field: "header_bytes".to_string(),
            reason: format!("expected {expected_header} for {ns} signals, got {header_bytes}"),
        });
    }
    if bytes.len() < expected_header {
        return Err(EdfError::Truncated { region: format!("signal headers ({ns} signals)") });
    }

    let layouts = parse_signal_headers(bytes, ns)?;
    let record_bytes: usize = layouts.iter().map(|l| l.record_bytes).sum();
    let data = &bytes[expected_header..];

    if num_records == -1 {
        if record_bytes == 0 || data.len() % record_bytes != 0 {
            return Err(EdfError::NonIntegralRecords { remaining: data.len(), record_bytes });
        }
        num_records = (data.len() / record_bytes) as i64;
    }
    let nrec = num_records as usize;
    if data.len() < nrec * record_bytes {
        return Err(EdfError::Truncated {
            region: format!(
                "data records: header declares {nrec} records of {record_bytes} bytes, only {} bytes present",
                data.len()
            ),
        });
    }

    // Calibration preconditions for every non-annotation signal.
    for l in &layouts {
        if l.header.is_annotation() {
            continue;
        }
        if l.header.digital_min >= l.header.digital_max {
            return Err(EdfError::Calibration { signal: l.header.label.clone() });
        }
        if l.header.physical_min == l.header.physical_max {
            return Err(EdfError::InvalidField {
                field: format!("physical range of {:?}", l.header.label),
                reason: "physical_min equals physical_max".to_string(),
            });
        }
    }

    let mut channels: Vec<Channel> = layouts
        .iter()
        .filter(|l| !l.header.is_annotation())
        .map(|l| Channel {
            header: l.header.clone(),
            samples: Vec::with_capacity(nrec * l.header.samples_per_record),
        })
        .collect();

    let mut offset = 0usize;
    for _ in 0..nrec {
        let mut out_idx = 0usize;
        for l in &layouts {
            if l.header.is_annotation() {
                offset += l.record_bytes;
                continue;
            }
            let ch = &mut channels[out_idx];
            for i in 0..l.header.samples_per_record {
                let at = offset + 2 * i;
                let d = i16::from_le_bytes([data[at], data[at + 1]]) as i32;
                ch.samples.push(digital_to_physical(d, &l.header));
            }
            offset += l.record_bytes;
            out_idx += 1;
        }
    }

    let mut header = EdfHeader {
        version,
        patient_id,
        recording_id,
        start_date,
        start_time,
        header_bytes: expected_header,
        reserved,
        num_records,
        record_duration_s,
        num_signals: ns,
    };
    // Annotation channels are dropped from the decoded recording.
    header.num_signals = channels.len();
    header.header_bytes = 256 * (channels.len() + 1);
    let rec = PsgRecording { header, channels, hypnogram: None };
    rec.validate()?;
    Ok(rec)
}

fn parse_signal_headers(bytes: &[u8], ns: usize) -> Result<Vec<SignalLayout>, EdfError> {
    let base = 256usize;
    let mut layouts = Vec::with_capacity(ns);
    for i in 0..ns {
        let label = read_text(bytes, base + 16 * i, 16, &format!("label[{i}]"))?;
        let transducer = read_text(bytes, base + ns * 16 + 80 * i, 80, &format!("transducer[{i}]"))?;
        let physical_dimension =
            read_text(bytes, base + ns * 96 + 8 * i, 8, &format!("physical_dimension[{i}]"))?;
        let physical_min = read_f64(bytes, base + ns * 104 + 8 * i, 8, &format!("physical_min[{i}]"))?;
        let physical_max = read_f64(bytes, base + ns * 112 + 8 * i, 8, &format!("physical_max[{i}]"))?;
        let digital_min = read_i64(bytes, base + ns * 120 + 8 * i, 8, &format!("digital_min[{i}]"))?;
        let digital_max = read_i64(bytes, base + ns * 128 + 8 * i, 8, &format!("digital_max[{i}]"))?;
        let prefilter = read_text(bytes, base + ns * 136 + 80 * i, 80, &format!("prefilter[{i}]"))?;
        let samples_per_record =
            read_i64(bytes, base + ns * 216 + 8 * i, 8, &format!("samples_per_record[{i}]"))?;
        let reserved = read_text(bytes, base + ns * 224 + 32 * i, 32, &format!("reserved[{i}]"))?;
        if samples_per_record < 1 {
            return Err(EdfError::InvalidField {
                field: format!("samples_per_record[{i}]"),
                reason: format!("must be >= 1, got {samples_per_record}"),
            });
        }
        let header = SignalHeader {
            label,
            transducer,
            physical_dimension,
            physical_min,
            physical_max,
            digital_min: digital_min as i32,
            digital_max: digital_max as i32,
            prefilter,
            samples_per_record: samples_per_record as usize,
            reserved,
        };
        layouts.push(SignalLayout { record_bytes: 2 * header.samples_per_record, header });
    }
    Ok(layouts)
}
