/**
 * Minimal RIFF/WAVE reader: PCM 16/24/32-bit and IEEE float32, any channel
 * count (mixed down to mono). Enough to feed local audio into the extractor
 * without pulling in a codec dependency; anything fancier should be converted
 * with ffmpeg first.
 */

export interface AudioClip {
  samples: Float32Array; // mono, in [-1, 1]
  sampleRate: number;
}

export function decodeWav(raw: Buffer): AudioClip {
  if (raw.length < 44 || raw.toString("latin1", 0, 4) !== "RIFF" || raw.toString("latin1", 8, 12) !== "WAVE") {
    throw new Error("not a RIFF/WAVE file");
  }
  let offset = 12;
  let format: { codec: number; channels: number; sampleRate: number; bits: number } | null = null;
  let dataStart = -1;
  let dataLength = 0;
  while (offset + 8 <= raw.length) {
    const id = raw.toString("latin1", offset, offset + 4);
    const size = raw.readUInt32LE(offset + 4);
    const body = offset + 8;
    if (id === "fmt ") {
      format = {
        codec: raw.readUInt16LE(body),
        channels: raw.readUInt16LE(body + 2),
        sampleRate: raw.readUInt32LE(body + 4),
        bits: raw.readUInt16LE(body + 14),
      };
    } else if (id === "data") {
      dataStart = body;
      dataLength = Math.min(size, raw.length - body);
    }
    offset = body + size + (size % 2);
  }
  if (!format || dataStart < 0) {
    throw new Error("WAVE file missing fmt or data chunk");
  }
  if (format.channels < 1 || format.sampleRate <= 0) {
    throw new Error(`bad WAVE format: ${format.channels} channels at ${format.sampleRate} Hz`);
  }
  const bytesPer = format.bits / 8;
  const frameCount = Math.floor(dataLength / (bytesPer * format.channels));
  const samples = new Float32Array(frameCount);
  const readSample = sampleReader(format.codec, format.bits);
  for (let i = 0; i < frameCount; i++) {
    let acc = 0;
    for (let c = 0; c < format.channels; c++) {
      acc += readSample(raw, dataStart + (i * format.channels + c) * bytesPer);
    }
    samples[i] = acc / format.channels;
  }
  return { samples, sampleRate: format.sampleRate };
}

function sampleReader(codec: number, bits: number): (raw: Buffer, at: number) => number {
  if (codec === 3 && bits === 32) {
    return (raw, at) => raw.readFloatLE(at);
  }
  if (codec === 1 && bits === 16) {
    return (raw, at) => raw.readInt16LE(at) / 32768;
  }
  if (codec === 1 && bits === 24) {
    return (raw, at) => {
      const v = raw[at] | (raw[at + 1] << 8) | (raw[at + 2] << 16);
      return (v >= 0x800000 ? v - 0x1000000 : v) / 8388608;
    };
  }
  if (codec === 1 && bits === 32) {
    return (raw, at) => raw.readInt32LE(at) / 2147483648;
  }
  throw new Error(`unsupported WAVE codec ${codec} at ${bits} bits`);
}

/** PCM16 writer, used by the tests to build fixtures. */
export function encodeWavPcm16(samples: Float32Array, sampleRate: number): Buffer {
  const data = Buffer.alloc(samples.length * 2);
  for (let i = 0; i < samples.length; i++) {
    const clamped = Math.max(-1, Math.min(1, samples[i]));
    data.writeInt16LE(Math.round(clamped * 32767), i * 2);
  }
  const header = Buffer.alloc(44);
  header.write("RIFF", 0, "latin1");
  header.writeUInt32LE(36 + data.length, 4);
  header.write("WAVE", 8, "latin1");
  header.write("fmt ", 12, "latin1");
  header.writeUInt32LE(16, 16);
  header.writeUInt16LE(1, 20); // PCM
  header.writeUInt16LE(1, 22); // mono
  header.writeUInt32LE(sampleRate, 24);
  header.writeUInt32LE(sampleRate * 2, 28);
  header.writeUInt16LE(2, 32);
  header.writeUInt16LE(16, 34);
  header.write("data", 36, "latin1");
  header.writeUInt32LE(data.length, 40);
  return Buffer.concat([header, data]);
}
