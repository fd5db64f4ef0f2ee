/** Parsers for the splat PLY export and the native binary model format. */

import { ModelParseError, SplatModel, emptyModel } from "./model.js";

const FLOAT_TYPES = new Set(["float", "float32"]);

interface PlyHeader {
  vertexCount: number;
  properties: string[];
  dataOffset: number;
}

function parseHeader(buffer: ArrayBuffer): PlyHeader {
  const probe = new Uint8Array(buffer, 0, Math.min(buffer.byteLength, 64 * 1024));
  let text = "";
  for (let i = 0; i < probe.length; i++) text += String.fromCharCode(probe[i]);
  const endTag = "end_header\n";
  const end = text.indexOf(endTag);
  if (!text.startsWith("ply\n") || end < 0) {
    throw new ModelParseError("not a PLY file (missing header)");
  }
  const lines = text.slice(0, end).split("\n");
  let vertexCount = -1;
  const properties: string[] = [];
  let inVertex = false;
  for (const line of lines) {
    const parts = line.trim().split(/\s+/);
    if (parts[0] === "format" && parts[1] !== "binary_little_endian") {
      throw new ModelParseError(`unsupported PLY format '${parts[1]}'`);
    }
    if (parts[0] === "element") {
      inVertex = parts[1] === "vertex";
      if (inVertex) vertexCount = parseInt(parts[2], 10);
    } else if (parts[0] === "property" && inVertex) {
      if (!FLOAT_TYPES.has(parts[1])) {
        throw new ModelParseError(`unsupported property type '${parts[1]}'`);
      }
      properties.push(parts[2]);
    }
  }
  if (vertexCount < 0) throw new ModelParseError("PLY has no vertex element");
  return { vertexCount, properties, dataOffset: end + endTag.length };
}

/**
 * Parse the splat PLY convention: positions, f_dc_*, f_rest_* (channel-major,
 * 15 per channel), opacity logit, log scales, quaternion.
 */
export function parsePly(buffer: ArrayBuffer): SplatModel {
  const header = parseHeader(buffer);
  const stride = header.properties.length;
  const bytes = buffer.byteLength - header.dataOffset;
  const expected = header.vertexCount * stride * 4;
  if (bytes < expected) {
    throw new ModelParseError(
      `truncated PLY: need ${expected} bytes of vertex data, have ${bytes}`);
  }
  const index = new Map(header.properties.map((name, i) => [name, i]));
  const need = (name: string): number => {
    const at = index.get(name);
    if (at === undefined) throw new ModelParseError(`PLY missing property '${name}'`);
    return at;
  };

  const ix = need("x"), iy = need("y"), iz = need("z");
  const idc = [need("f_dc_0"), need("f_dc_1"), need("f_dc_2")];
  const iop = need("opacity");
  const isc = [need("scale_0"), need("scale_1"), need("scale_2")];
  const irot = [need("rot_0"), need("rot_1"), need("rot_2"), need("rot_3")];
  const hasRest = index.has("f_rest_0");
  const irest: number[] = [];
  if (hasRest) {
    for (let i = 0; i < 45; i++) irest.push(need(`f_rest_${i}`));
  }

  // the header length is arbitrary, so realign the vertex block
  const data = new Float32Array(
    buffer.slice(header.dataOffset, header.dataOffset + expected));
  const model = emptyModel(header.vertexCount);
  for (let v = 0; v < header.vertexCount; v++) {
    const row = v * stride;
    model.means[3 * v] = data[row + ix];
    model.means[3 * v + 1] = data[row + iy];
    model.means[3 * v + 2] = data[row + iz];
    for (let k = 0; k < 4; k++) model.rotations[4 * v + k] = data[row + irot[k]];
    for (let k = 0; k < 3; k++) model.logScales[3 * v + k] = data[row + isc[k]];
    model.opacityLogits[v] = data[row + iop];
    for (let c = 0; c < 3; c++) {
      model.sh[48 * v + c] = data[row + idc[c]];
      if (hasRest) {
        for (let k = 1; k < 16; k++) {
          model.sh[48 * v + 3 * k + c] = data[row + irest[c * 15 + (k - 1)]];
        }
      }
    }
  }
  return model;
}

const MODEL_MAGIC = 0x4d4c5053; // "SPLM" little-endian
const RECORD_FLOATS = 59;

/** Parse the native binary model (mean, log scale, quaternion, opacity, SH). */
export function parseBinaryModel(buffer: ArrayBuffer): SplatModel {
  if (buffer.byteLength < 24) throw new ModelParseError("file too small for a model header");
  const view = new DataView(buffer);
  if (view.getUint32(0, true) !== MODEL_MAGIC) {
    throw new ModelParseError("not a splat model (bad magic)");
  }
  const version = view.getUint32(4, true);
  if (version !== 1) throw new ModelParseError(`unsupported model version ${version}`);
  const count = Number(view.getBigUint64(8, true));
  const expected = 24 + count * RECORD_FLOATS * 4;
  if (buffer.byteLength !== expected) {
    throw new ModelParseError(
      `truncated model: header says ${count} records (${expected} bytes), file has ${buffer.byteLength}`);
  }
  const data = new Float32Array(buffer, 24, count * RECORD_FLOATS);
  const model = emptyModel(count);
  for (let v = 0; v < count; v++) {
    const row = v * RECORD_FLOATS;
    for (let k = 0; k < 3; k++) model.means[3 * v + k] = data[row + k];
    for (let k = 0; k < 3; k++) model.logScales[3 * v + k] = data[row + 3 + k];
    for (let k = 0; k < 4; k++) model.rotations[4 * v + k] = data[row + 6 + k];
    model.opacityLogits[v] = data[row + 10];
    // records store SH channel-major: 16 for R, 16 for G, 16 for B
    for (let c = 0; c < 3; c++) {
      for (let k = 0; k < 16; k++) {
        model.sh[48 * v + 3 * k + c] = data[row + 11 + c * 16 + k];
      }
    }
  }
  return model;
}

/** Dispatch on the file contents: PLY text magic or the binary model magic. */
export function parseModelFile(buffer: ArrayBuffer): SplatModel {
  if (buffer.byteLength >= 4) {
    const head = new Uint8Array(buffer, 0, 4);
    if (head[0] === 0x70 && head[1] === 0x6c && head[2] === 0x79 && head[3] === 0x0a) {
      return parsePly(buffer);
    }
  }
  return parseBinaryModel(buffer);
}
