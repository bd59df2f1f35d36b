// Client-side character-edit estimate (insertions + deletions over an LCS
// alignment). Display only — the server's count is authoritative.

export function lcsLength(a: string, b: string): number {
  if (!a.length || !b.length) return 0;
  let prev = new Array<number>(b.length + 1).fill(0);
  for (const ch of a) {
    const cur = [0];
    for (let j = 1; j <= b.length; j++) {
      cur.push(ch === b[j - 1] ? prev[j - 1] + 1 : Math.max(prev[j], cur[j - 1]));
    }
    prev = cur;
  }
  return prev[b.length];
}

export function estimateEditCount(hyp: string, corrected: string): number {
  const lcs = lcsLength(hyp, corrected);
  return hyp.length - lcs + (corrected.length - lcs);
}
