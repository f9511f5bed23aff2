/**
 * Wire types for the survey service, validated with zod so a misbehaving
 * server fails loudly instead of propagating undefineds into the UI.
 */

import { z } from 'zod';

export const questionPayloadSchema = z.object({
    prompt: z.string(),
    choices: z.array(z.string()).min(1),
    anchors: z.array(z.number()).min(1),
    allow_exact: z.boolean(),
    allow_opt_out: z.boolean(),
    round: z.number().int().min(1),
    max_rounds: z.number().int().min(1),
    issue_id: z.string(),
    coverage: z.number().min(0).max(1),
});
export type QuestionPayload = z.infer<typeof questionPayloadSchema>;

export const answerResultSchema = z.object({
    status: z.enum(['active', 'done', 'null']),
    state: z.enum(['NextRound', 'QuestionDone', 'NullResponse']),
    suppressed: z.boolean().optional(),
});
export type AnswerResult = z.infer<typeof answerResultSchema>;

export const coverageReportSchema = z.object({
    tau: z.number(),
    stderr: z.number(),
    n: z.number().int(),
    prior_tag: z.string(),
});

export const estimateResponseSchema = z.object({
    cdf: z.array(z.tuple([z.number(), z.number()])),
    coverage: coverageReportSchema,
    n_records: z.number().int(),
    rounds: z.enum(['all', 'first']),
    energy_distance_vs_reference: z.number().optional(),
});
export type EstimateResponse = z.infer<typeof estimateResponseSchema>;

export const apiErrorSchema = z.object({
    code: z.string(),
    message: z.string(),
    field: z.string().optional(),
});
export type ApiErrorBody = z.infer<typeof apiErrorSchema>;

export interface QuestionSpec {
    prompt: string;
    domain: [number, number];
    mechanism: Record<string, unknown>;
    allow_exact?: boolean;
    allow_opt_out?: boolean;
    display_precision?: number;
    reference_cdf?: Array<[number, number]>;
}

export interface SurveySpec {
    title: string;
    questions: QuestionSpec[];
}

export interface AnswerBody {
    issue_id: string;
    choice?: number;
    exact?: number;
    opt_out?: boolean;
}
