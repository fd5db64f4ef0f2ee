/** Parsing worker: decodes model files off the UI thread. */

import { parseModelFile } from "./ply.js";

interface ParseRequest {
  kind: "parse";
  buffer: ArrayBuffer;
}

const port = self as unknown as Worker;

port.onmessage = (event: MessageEvent<ParseRequest>) => {
  const msg = event.data;
  if (msg.kind !== "parse") return;
  try {
    const model = parseModelFile(msg.buffer);
    port.postMessage(
      { kind: "model", model },
      [model.means.buffer, model.rotations.buffer, model.logScales.buffer,
       model.opacityLogits.buffer, model.sh.buffer],
    );
  } catch (err) {
    port.postMessage({
      kind: "error",
      message: err instanceof Error ? err.message : String(err),
    });
  }
};
