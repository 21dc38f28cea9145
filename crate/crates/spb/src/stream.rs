use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::{Frame, Message, MsgType, SpbError, SPB_MAGIC};

/// Incremental structure validator for a frame sequence. Accepts exactly one
/// header first and one trailer last with file groups in between; inside a
/// group, events are only legal once a trigger menu has been seen.
#[derive(Clone, Debug)]
pub struct StructureChecker {
    state: State,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum State {
    Start,
    Top,
    InGroup { menu_seen: bool },
    Done,
}

impl Default for StructureChecker {
    fn default() -> Self {
        StructureChecker::new()
    }
}

impl StructureChecker {
    pub fn new() -> Self {
        StructureChecker { state: State::Start }
    }

    pub fn accept(&mut self, msg_type: MsgType) -> Result<(), SpbError> {
        use MsgType::*;
        let violation = |detail: &str| Err(SpbError::Structure(detail.to_string()));
        self.state = match (self.state, msg_type) {
            (State::Start, Header) => State::Top,
            (State::Start, _) => return violation("stream must begin with a header"),
            (State::Top, BeginGuid) => State::InGroup { menu_seen: false },
            (State::Top, Trailer) => State::Done,
            (State::Top, Header) => return violation("duplicate header"),
            (State::Top, EndGuid) => return violation("group end without group begin"),
            (State::Top, TriggerMenu | EiEvent) => {
                return violation("menu or event outside a file group")
            }
            (State::InGroup { .. }, TriggerMenu) => State::InGroup { menu_seen: true },
            (State::InGroup { menu_seen: true }, EiEvent) => State::InGroup { menu_seen: true },
            (State::InGroup { menu_seen: false }, EiEvent) => {
                return violation("event before any trigger menu in its group")
            }
            (State::InGroup { .. }, EndGuid) => State::Top,
            (State::InGroup { .. }, Header | Trailer | BeginGuid) => {
                return violation("file group not terminated")
            }
            (State::Done, _) => return violation("frame after trailer"),
        };
        Ok(())
    }

    /// Must be called at end of stream: the trailer has to be the last frame.
    pub fn finish(&self) -> Result<(), SpbError> {
        match self.state {
            State::Done => Ok(()),
            State::Start => Err(SpbError::Structure("empty stream".into())),
            State::Top => Err(SpbError::Structure("missing trailer".into())),
            State::InGroup { .. } => Err(SpbError::Structure("unterminated file group".into())),
        }
    }
}

struct CountingWriter<W: Write> {
    inner: W,
    written: u64,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Streaming writer: compresses as it goes and enforces stream structure on
/// every frame. `finish` fails unless the trailer has been written.
pub struct SpbWriter<W: Write> {
    gz: GzEncoder<CountingWriter<W>>,
    checker: StructureChecker,
}

impl<W: Write> SpbWriter<W> {
    pub fn new(sink: W) -> Result<Self, SpbError> {
        let counting = CountingWriter {
            inner: sink,
            written: 0,
        };
        let mut gz = GzEncoder::new(counting, Compression::default());
        gz.write_all(&SPB_MAGIC.to_le_bytes())?;
        Ok(SpbWriter {
            gz,
            checker: StructureChecker::new(),
        })
    }

    pub fn write(&mut self, message: &Message) -> Result<(), SpbError> {
        self.write_frame(&message.encode()?)
    }

    pub fn write_frame(&mut self, frame: &Frame) -> Result<(), SpbError> {
        self.checker.accept(frame.msg_type)?;
        frame.write_to(&mut self.gz)?;
        Ok(())
    }

    /// Flush the compressor and return `(sink, compressed_bytes)`.
    pub fn finish(self) -> Result<(W, u64), SpbError> {
        self.checker.finish()?;
        let counting = self.gz.finish()?;
        Ok((counting.inner, counting.written))
    }
}

/// Streaming reader: decompresses, verifies the magic up front, and checks
/// structure as frames are pulled. The iterator yields `Err` once and then
/// stops.
pub struct SpbReader<R: Read> {
    gz: GzDecoder<R>,
    checker: StructureChecker,
    failed: bool,
    done: bool,
}

impl<R: Read> SpbReader<R> {
    pub fn new(source: R) -> Result<Self, SpbError> {
        let mut gz = GzDecoder::new(source);
        let mut magic = [0u8; 4];
        gz.read_exact(&mut magic)
            .map_err(|e| SpbError::from_read(e, "stream magic"))?;
        let found = u32::from_le_bytes(magic);
        if found != SPB_MAGIC {
            return Err(SpbError::BadMagic { found });
        }
        Ok(SpbReader {
            gz,
            checker: StructureChecker::new(),
            failed: false,
            done: false,
        })
    }

    /// Next frame, or `None` at a structurally complete end of stream.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, SpbError> {
        match Frame::read_from(&mut self.gz)? {
            Some(frame) => {
                self.checker.accept(frame.msg_type)?;
                Ok(Some(frame))
            }
            None => {
                self.checker.finish()?;
                Ok(None)
            }
        }
    }
}

impl<R: Read> Iterator for SpbReader<R> {
    type Item = Result<Frame, SpbError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.done {
            return None;
        }
        match self.next_frame() {
            Ok(Some(frame)) => Some(Ok(frame)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Write a complete message sequence as one compressed stream; returns the
/// number of compressed bytes produced.
pub fn write_stream<W: Write>(sink: W, messages: &[Message]) -> Result<u64, SpbError> {
    let mut writer = SpbWriter::new(sink)?;
    for message in messages {
        writer.write(message)?;
    }
    let (_, written) = writer.finish()?;
    Ok(written)
}

/// Read and decode a complete stream, validating structure.
pub fn read_stream<R: Read>(source: R) -> Result<Vec<Message>, SpbError> {
    let mut reader = SpbReader::new(source)?;
    let mut messages = Vec::new();
    while let Some(frame) = reader.next_frame()? {
        messages.push(Message::decode(&frame)?);
    }
    Ok(messages)
}

/// Read a complete stream as raw frames, validating structure but not
/// decoding payloads.
pub fn scan_frames<R: Read>(source: R) -> Result<Vec<Frame>, SpbError> {
    let mut reader = SpbReader::new(source)?;
    let mut frames = Vec::new();
    while let Some(frame) = reader.next_frame()? {
        frames.push(frame);
    }
    Ok(frames)
}
