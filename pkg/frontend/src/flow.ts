/**
 * State machine for answering one survey question, including multi-round
 * flows where each answer narrows the candidate range and the server issues
 * a fresh sub-range question for the next round.
 */

import type { SurveyClient } from './client';
import type { AnswerResult, QuestionPayload } from './types';
import { checkExactEntry, type ExactCheck } from './validation';

export type FlowStatus =
    | 'idle' // begin() not called yet
    | 'question' // a question payload is displayed, waiting for an answer
    | 'done' // question finished with a usable response
    | 'opted_out' // respondent declined; no further rounds
    | 'withheld'; // the release gate suppressed the response

export interface RoundRecord {
    payload: QuestionPayload;
    choice?: number;
    exact?: number;
}

export class FlowStateError extends Error {
    constructor(message: string) {
        super(message);
        this.name = 'FlowStateError';
    }
}

export class QuestionFlow {
    status: FlowStatus = 'idle';
    current: QuestionPayload | null = null;
    rounds: RoundRecord[] = [];
    lastResult: AnswerResult | null = null;

    constructor(
        private readonly client: SurveyClient,
        private readonly sessionId: string,
        private readonly qi: number,
        private readonly domain: [number, number],
        private readonly topology: 'canonical' | 'ring' | 'progressive' = 'canonical',
    ) {}

    /** Fetch the first (or re-serve the pending) round. */
    async begin(): Promise<QuestionPayload> {
        this.current = await this.client.nextQuestion(this.sessionId, this.qi);
        this.status = 'question';
        return this.current;
    }

    get isMultiRound(): boolean {
        return (this.current?.max_rounds ?? 1) > 1;
    }

    validateExact(value: number, selectedChoice?: number): ExactCheck {
        const payload = this.requireQuestion();
        return checkExactEntry({
            value,
            domain: this.domain,
            anchors: payload.anchors,
            allowExact: payload.allow_exact,
            topology: this.isMultiRound ? 'progressive' : this.topology,
            selectedChoice,
        });
    }

    async answerChoice(choice: number): Promise<AnswerResult> {
        const payload = this.requireQuestion();
        const m = payload.choices.length;
        if (!Number.isInteger(choice) || choice < 1 || choice > m) {
            throw new FlowStateError(`choice must be an integer in 1..${m}`);
        }
        return this.submit({ issue_id: payload.issue_id, choice }, { choice });
    }

    async answerExact(value: number, selectedChoice?: number): Promise<AnswerResult> {
        const payload = this.requireQuestion();
        const check = this.validateExact(value, selectedChoice);
        if (!check.ok) {
            throw new FlowStateError(check.message ?? 'invalid exact value');
        }
        return this.submit(
            { issue_id: payload.issue_id, exact: value, choice: selectedChoice },
            { choice: check.impliedChoice, exact: value },
        );
    }

    async optOut(): Promise<AnswerResult> {
        const payload = this.requireQuestion();
        if (!payload.allow_opt_out) {
            throw new FlowStateError('opt-out is not available for this question');
        }
        return this.submit({ issue_id: payload.issue_id, opt_out: true }, {});
    }

    /** Re-post the last answer (e.g. after a lost response); the server
     * treats the duplicate as a no-op and returns the recorded result. */
    async retryLast(): Promise<AnswerResult> {
        const last = this.rounds[this.rounds.length - 1];
        if (!last || this.lastResult === null) {
            throw new FlowStateError('nothing to retry');
        }
        return this.client.submitAnswer(this.sessionId, this.qi, {
            issue_id: last.payload.issue_id,
            choice: last.choice,
            exact: last.exact,
        });
    }

    private requireQuestion(): QuestionPayload {
        if (this.status !== 'question' || this.current === null) {
            throw new FlowStateError(`no question is pending (status: ${this.status})`);
        }
        return this.current;
    }

    private async submit(
        body: { issue_id: string; choice?: number; exact?: number; opt_out?: boolean },
        record: { choice?: number; exact?: number },
    ): Promise<AnswerResult> {
        const payload = this.requireQuestion();
        const result = await this.client.submitAnswer(this.sessionId, this.qi, body);
        this.lastResult = result;
        if (!body.opt_out) {
            this.rounds.push({ payload, ...record });
        }
        if (result.status === 'active') {
            // Next round: the server narrows the range and issues new anchors.
            this.current = await this.client.nextQuestion(this.sessionId, this.qi);
            this.status = 'question';
        } else {
            this.current = null;
            if (body.opt_out) {
                this.status = 'opted_out';
            } else if (result.suppressed) {
                this.status = 'withheld';
            } else {
                this.status = 'done';
            }
        }
        return result;
    }
}
