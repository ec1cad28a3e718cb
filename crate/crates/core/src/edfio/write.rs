//! EDF writer: bit-exact fixed-width header layout and record-interleaved
//! 2-byte little-endian samples.

use super::format::{format_f64, write_text};
use super::{physical_to_digital, EdfError, PsgRecording};
use std::io::Write;
use std::path::Path;

/// Serialize a recording to EDF bytes. Out-of-range physical values are an
/// error rather than being clipped, so round trips stay faithful.
pub fn write_edf(rec: &PsgRecording) -> Result<Vec<u8>, EdfError> {
    if rec.channels.is_empty() {
        return Err(EdfError::EmptyChannels);
    }
    if rec.header.num_records < 0 {
        return Err(EdfError::InvalidField {
            field: "num_records".to_string(),
            reason: "must be resolved (>= 0) before writing".to_string(),
        });
    }
    rec.validate()?;
    let ns = rec.channels.len();
    let nrec = rec.header.num_records as usize;
    let header_bytes = 256 * (ns + 1);

    for ch in &rec.channels {
        if ch.header.digital_min >= ch.header.digital_max {
            return Err(EdfError::Calibration { signal: ch.header.label.clone() });
        }
        for (i, &v) in ch.samples.iter().enumerate() {
            if v < ch.header.physical_min || v > ch.header.physical_max {
                return Err(EdfError::PhysicalRange {
                    channel: ch.header.label.clone(),
                    index: i,
                    value: v,
                    min: ch.header.physical_min,
                    max: ch.header.physical_max,
                });
            }
        }
    }

    let data_bytes: usize = nrec * rec.channels.iter().map(|c| 2 * c.header.samples_per_record).sum::<usize>();
    let mut out = Vec::with_capacity(header_bytes + data_bytes);

    // Fixed header.
    write_text(&mut out, &rec.header.version, 8, "version")?;
    write_text(&mut out, &rec.header.patient_id, 80, "patient_id")?;
    write_text(&mut out, &rec.header.recording_id, 80, "recording_id")?;
    write_text(&mut out, &rec.header.start_date, 8, "start_date")?;
    write_text(&mut out, &rec.header.start_time, 8, "start_time")?;
    write_text(&mut out, &header_bytes.to_string(), 8, "header_bytes")?;
    write_text(&mut out, &rec.header.reserved, 44, "reserved")?;
    write_text(&mut out, &nrec.to_string(), 8, "num_records")?;
    write_text(&mut out, &format_f64(rec.header.record_duration_s, 8), 8, "record_duration_s")?;
    write_text(&mut out, &ns.to_string(), 4, "num_signals")?;
    debug_assert_eq!(out.len(), 256);

    // Signal headers, field-major.
    for ch in &rec.channels {
        write_text(&mut out, &ch.header.label, 16, "label")?;
    }
    for ch in &rec.channels {
        write_text(&mut out, &ch.header.transducer, 80, "transducer")?;
    }
    for ch in &rec.channels {
        write_text(&mut out, &ch.header.physical_dimension, 8, "physical_dimension")?;
    }
    for ch in &rec.channels {
        write_text(&mut out, &format_f64(ch.header.physical_min, 8), 8, "physical_min")?;
    }
    for ch in &rec.channels {
        write_text(&mut out, &format_f64(ch.header.physical_max, 8), 8, "physical_max")?;
    }
    for ch in &rec.channels {
        write_text(&mut out, &ch.header.digital_min.to_string(), 8, "digital_min")?;
    }
    for ch in &rec.channels {
        write_text(&mut out, &ch.header.digital_max.to_string(), 8, "digital_max")?;
    }
    for ch in &rec.channels {
        write_text(&mut out, &ch.header.prefilter, 80, "prefilter")?;
    }
    for ch in &rec.channels {
        write_text(&mut out, &ch.header.samples_per_record.to_string(), 8, "samples_per_record")?;
    }
    for ch in &rec.channels {
        write_text(&mut out, &ch.header.reserved, 32, "reserved")?;
    }
    debug_assert_eq!(out.len(), header_bytes);

    // Data records: for each record, each signal's samples back to back.
    for r in 0..nrec {
        for ch in &rec.channels {
            let spr = ch.header.samples_per_record;
            for i in 0..spr {
                let d = physical_to_digital(ch.samples[r * spr + i], &ch.header);
                let d = d.clamp(ch.header.digital_min, ch.header.digital_max) as i16;
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_edf_file(rec: &PsgRecording, path: impl AsRef<Path>) -> Result<(), EdfError> {
    let bytes = write_edf(rec)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{read_edf, Channel, EdfHeader, PsgRecording, SignalHeader};
    use super::*;

    fn simple_recording() -> PsgRecording {
        let header = EdfHeader::new(10, 1.0, 1);
        let sh = SignalHeader::new("EEG C4", -250.0, 250.0, 100);
        let samples: Vec<f64> = (0..1000).map(|i| 100.0 * (i as f64 * 0.05).sin()).collect();
        PsgRecording { header, channels: vec![Channel { header: sh, samples }], hypnogram: None }
    }

    #[test]
    fn round_trip_within_one_quantization_step() {
        let rec = simple_recording();
        let bytes = write_edf(&rec).unwrap();
        let back = read_edf(&bytes[..]).unwrap();
        assert_eq!(back.channels.len(), 1);
        assert_eq!(back.channels[0].samples.len(), 1000);
        let q = rec.channels[0].header.quantization_step();
        for (a, b) in rec.channels[0].samples.iter().zip(&back.channels[0].samples) {
            assert!((a - b).abs() <= q, "error {} exceeds one step {q}", (a - b).abs());
        }
        assert_eq!(back.header, rec.header);
    }

    #[test]
    fn header_bytes_for_two_signals() {
        let mut rec = simple_recording();
        rec.channels.push(rec.channels[0].clone());
        rec.channels[1].header.label = "EEG O2".to_string();
        rec.header.num_signals = 2;
        rec.header.header_bytes = 768;
        let bytes = write_edf(&rec).unwrap();
        let back = read_edf(&bytes[..]).unwrap();
        assert_eq!(back.header.header_bytes, 768);
    }

    #[test]
    fn empty_channel_list_rejected() {
        let rec = PsgRecording { header: EdfHeader::new(0, 1.0, 0), channels: vec![], hypnogram: None };
        assert!(matches!(write_edf(&rec), Err(EdfError::EmptyChannels)));
    }

    #[test]
    fn out_of_range_sample_is_an_error_not_clipped() {
        let mut rec = simple_recording();
        rec.channels[0].samples[7] = 10_000.0;
        match write_edf(&rec) {
            Err(EdfError::PhysicalRange { index, .. }) => assert_eq!(index, 7),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn data_section_length_matches_layout() {
        // 2 channels, 3 records: data = 3 * (spr1 + spr2) * 2 bytes.
        let header = EdfHeader::new(3, 1.0, 2);
        let ch1 = Channel { header: SignalHeader::new("A", -100.0, 100.0, 40), samples: vec![0.0; 120] };
        let ch2 = Channel { header: SignalHeader::new("B", -100.0, 100.0, 25), samples: vec![1.0; 75] };
        let rec = PsgRecording { header, channels: vec![ch1, ch2], hypnogram: None };
        let bytes = write_edf(&rec).unwrap();
        assert_eq!(bytes.len(), 256 * 3 + 3 * (40 + 25) * 2);
    }

    #[test]
    fn synthetic_layout_decodes_expected_sample_count() {
        // 1 signal, 10 records of 1 s at 100 samples/record -> 1000 samples.
        let rec = simple_recording();
        let bytes = write_edf(&rec).unwrap();
        let back = read_edf(&bytes[..]).unwrap();
        assert_eq!(back.channels[0].samples.len(), 1000);
    }

    #[test]
    fn truncated_file_names_missing_region() {
        let rec = simple_recording();
        let bytes = write_edf(&rec).unwrap();
        match read_edf(&bytes[..bytes.len() - 10]) {
            Err(EdfError::Truncated { region }) => assert!(region.contains("data records")),
            other => panic!("expected truncation error, got {other:?}"),
        }
        match read_edf(&bytes[..100]) {
            Err(EdfError::Truncated { .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn unresolved_record_count_from_file_size() {
        let rec = simple_recording();
        let mut bytes = write_edf(&rec).unwrap();
        // Patch num_records to -1.
        bytes[236..244].copy_from_slice(b"-1      ");
        let back = read_edf(&bytes[..]).unwrap();
        assert_eq!(back.header.num_records, 10);
        // Now break the record alignment.
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_edf(&bytes[..]), Err(EdfError::NonIntegralRecords { .. })));
    }

    #[test]
    fn equal_digital_bounds_is_calibration_error() {
        let rec = simple_recording();
        let mut bytes = write_edf(&rec).unwrap();
        // digital_min field of signal 0 starts at 256 + ns*120 with ns=1.
        let off = 256 + 120;
        bytes[off..off + 8].copy_from_slice(b"32767   ");
        match read_edf(&bytes[..]) {
            Err(EdfError::Calibration { signal }) => assert_eq!(signal, "EEG C4"),
            other => panic!("expected calibration error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_header_field_reports_offset() {
        let rec = simple_recording();
        let mut bytes = write_edf(&rec).unwrap();
        bytes[184..192].copy_from_slice(b"oops    ");
        match read_edf(&bytes[..]) {
            Err(EdfError::Parse { field, offset, .. }) => {
                assert_eq!(field, "header_bytes");
                assert_eq!(offset, 184);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn annotation_channels_skipped() {
        let header = EdfHeader::new(2, 1.0, 2);
        let ch1 = Channel { header: SignalHeader::new("EEG", -100.0, 100.0, 10), samples: vec![5.0; 20] };
        let mut ann_header = SignalHeader::new(super::super::ANNOTATION_LABEL, -1.0, 1.0, 8);
        ann_header.physical_dimension = String::new();
        let ann = Channel { header: ann_header, samples: vec![0.0; 16] };
        let rec = PsgRecording { header, channels: vec![ch1, ann], hypnogram: None };
        let bytes = write_edf(&rec).unwrap();
        let back = read_edf(&bytes[..]).unwrap();
        assert_eq!(back.channels.len(), 1);
        assert_eq!(back.channels[0].header.label, "EEG");
        assert_eq!(back.header.num_signals, 1);
        assert!((back.channels[0].samples[3] - 5.0).abs() < 0.1);
    }
}
