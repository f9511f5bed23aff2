/**
 * Typed HTTP client for the survey service.  The transport is injectable so
 * tests can run against an in-memory fake without a network.
 */

import {
    answerResultSchema,
    apiErrorSchema,
    estimateResponseSchema,
    questionPayloadSchema,
    type AnswerBody,
    type AnswerResult,
    type ApiErrorBody,
    type EstimateResponse,
    type QuestionPayload,
    type SurveySpec,
} from './types';

export interface TransportResponse {
    status: number;
    body: unknown; // parsed JSON, or a raw string for text endpoints
}

export type Transport = (
    method: 'GET' | 'POST',
    path: string,
    body?: unknown,
) => Promise<TransportResponse>;

export class ApiError extends Error {
    constructor(
        public readonly status: number,
        public readonly detail: ApiErrorBody,
    ) {
        super(`${detail.code}: ${detail.message}`);
        this.name = 'ApiError';
    }
}

export function fetchTransport(baseUrl: string): Transport {
    return async (method, path, body) => {
        const response = await fetch(baseUrl + path, {
            method,
            headers: body !== undefined ? { 'Content-Type': 'application/json' } : undefined,
            body: body !== undefined ? JSON.stringify(body) : undefined,
        });
        const text = await response.text();
        const contentType = response.headers.get('content-type') ?? '';
        const parsed = contentType.includes('json') && text ? JSON.parse(text) : text;
        return { status: response.status, body: parsed };
    };
}

function raiseIfError(res: TransportResponse): void {
    if (res.status >= 400) {
        const detail = apiErrorSchema.safeParse(res.body);
        throw new ApiError(
            res.status,
            detail.success
                ? detail.data
                : { code: 'unknown', message: `unexpected error (HTTP ${res.status})` },
        );
    }
}

export class SurveyClient {
    constructor(private readonly transport: Transport) {}

    async createSurvey(spec: SurveySpec): Promise<string> {
        const res = await this.transport('POST', '/surveys', spec);
        raiseIfError(res);
        return (res.body as { id: string }).id;
    }

    async startSession(surveyId: string): Promise<string> {
        const res = await this.transport('POST', `/surveys/${surveyId}/sessions`);
        raiseIfError(res);
        return (res.body as { session_id: string }).session_id;
    }

    async nextQuestion(sessionId: string, qi: number): Promise<QuestionPayload> {
        const res = await this.transport('GET', `/sessions/${sessionId}/questions/${qi}`);
        raiseIfError(res);
        return questionPayloadSchema.parse(res.body);
    }

    async submitAnswer(sessionId: string, qi: number, answer: AnswerBody): Promise<AnswerResult> {
        const res = await this.transport('POST', `/sessions/${sessionId}/questions/${qi}/answer`, answer);
        raiseIfError(res);
        return answerResultSchema.parse(res.body);
    }

    async exportRecords(surveyId: string, qi: number): Promise<string> {
        const res = await this.transport('GET', `/surveys/${surveyId}/questions/${qi}/export`);
        raiseIfError(res);
        return String(res.body);
    }

    async estimate(
        surveyId: string,
        qi: number,
        rounds: 'all' | 'first' = 'all',
    ): Promise<EstimateResponse> {
        const res = await this.transport(
            'GET',
            `/surveys/${surveyId}/questions/${qi}/estimate?rounds=${rounds}`,
        );
        raiseIfError(res);
        return estimateResponseSchema.parse(res.body);
    }
}
