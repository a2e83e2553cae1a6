import * as fs from "node:fs";
import * as path from "node:path";
import Papa from "papaparse";

export interface SummaryRow {
  policy: string;
  access: string;
  radio: string;
  n_vehicles: number;
  message_size_bits: number;
  n_seeds: number;
  aoi_mean: number;
  aoi_std: number;
  energy_mean: number;
  energy_std: number;
}

export interface LearningRow {
  policy: string;
  access: string;
  radio: string;
  n_vehicles: number;
  message_size_bits: number;
  episode: number;
  n_seeds: number;
  reward_mean: number;
  reward_std: number;
}

export class MissingColumnError extends Error {
  constructor(file: string, columns: string[]) {
    super(`${file} is missing required column(s): ${columns.join(", ")}`);
    this.name = "MissingColumnError";
  }
}

const SUMMARY_COLUMNS = [
  "policy", "access", "radio", "n_vehicles", "message_size_bits",
  "n_seeds", "aoi_mean", "aoi_std", "energy_mean", "energy_std",
];
const LEARNING_COLUMNS = [
  "policy", "access", "radio", "n_vehicles", "message_size_bits",
  "episode", "n_seeds", "reward_mean", "reward_std",
];

function parseFile(file: string, required: string[]): Record<string, string>[] {
  const text = fs.readFileSync(file, "utf8");
  const parsed = Papa.parse<Record<string, string>>(text, {
    header: true,
    skipEmptyLines: true,
  });
  const fields = parsed.meta.fields ?? [];
  const missing = required.filter((c) => !fields.includes(c));
  if (missing.length > 0) {
    throw new MissingColumnError(path.basename(file), missing);
  }
  return parsed.data;
}

export function readSummary(dir: string): SummaryRow[] {
  return parseFile(path.join(dir, "summary.csv"), SUMMARY_COLUMNS).map((r) => ({
    policy: r.policy,
    access: r.access,
    radio: r.radio,
    n_vehicles: Number(r.n_vehicles),
    message_size_bits: Number(r.message_size_bits),
    n_seeds: Number(r.n_seeds),
    aoi_mean: Number(r.aoi_mean),
    aoi_std: Number(r.aoi_std),
    energy_mean: Number(r.energy_mean),
    energy_std: Number(r.energy_std),
  }));
}

export function readLearning(dir: string): LearningRow[] {
  const file = path.join(dir, "learning_summary.csv");
  if (!fs.existsSync(file)) {
    return [];
  }
  return parseFile(file, LEARNING_COLUMNS).map((r) => ({
    policy: r.policy,
    access: r.access,
    radio: r.radio,
    n_vehicles: Number(r.n_vehicles),
    message_size_bits: Number(r.message_size_bits),
    episode: Number(r.episode),
    n_seeds: Number(r.n_seeds),
    reward_mean: Number(r.reward_mean),
    reward_std: Number(r.reward_std),
  }));
}
