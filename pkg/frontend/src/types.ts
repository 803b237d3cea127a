/** Wire types of the play service. */

export type EventKind =
  | "utterance"
  | "move"
  | "outcome"
  | "rejection"
  | "turn"
  | "closed";

export interface SessionEvent {
  seq: number;
  kind: EventKind;
  payload: Record<string, unknown>;
}

export type TurnOwner = "user" | "agent" | "over";

export interface Snapshot {
  session_id: string;
  board: string; // 9 cells in {., o, x} plus the side to move
  turn: TurnOwner;
  waiting_for: "verbal" | "draw" | null;
  outcome: string;
  transcript_length: number;
}

export interface CreateResponse {
  session_id: string;
  events: SessionEvent[];
}

export interface RasterResponse {
  committed: boolean;
  events: SessionEvent[];
}

export interface EventsResponse {
  events: SessionEvent[];
}

export const GRID_LOCATIONS = [
  "upperleft", "uppermiddle", "upperright",
  "middleleft", "middle", "middleright",
  "lowerleft", "lowermiddle", "lowerright",
] as const;
