/* C interface for the slpfo library.
 *
 * All handles are opaque and owned by the library; free them with the
 * matching *_free function. Functions returning int use the SLPFO_*
 * codes below; a human-readable message for the most recent failure on
 * the calling thread is available via slpfo_last_error().
 */

#ifndef SLPFO_H
#define SLPFO_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define SLPFO_OK 0
#define SLPFO_ERR_PARSE 1   /* malformed SLP or query text */
#define SLPFO_ERR_INVALID 2 /* well-formed but violates a program invariant */
#define SLPFO_ERR_CAP 3     /* an internal size cap was exceeded */
#define SLPFO_ERR_OTHER 4
#define SLPFO_ERR_BUFFER 5  /* caller-provided buffer too small */
#define SLPFO_ERR_NULL 6    /* null argument */

typedef struct SlpfoSlp SlpfoSlp;   /* a parsed straight-line program */
typedef struct SlpfoEnum SlpfoEnum; /* a running answer enumeration */

/* Message for the last failing call on this thread. Valid until the next
 * failing call on the same thread; never NULL. */
const char *slpfo_last_error(void);

/* Parse program text (NUL-terminated UTF-8). On SLPFO_OK, *out owns a new
 * handle. */
int slpfo_slp_parse(const char *text, SlpfoSlp **out);
void slpfo_slp_free(SlpfoSlp *h);

/* SLPFO_OK if the program is well-formed, apex, and acyclic. */
int slpfo_slp_validate(const SlpfoSlp *h);

/* Program size: universe nodes + arity-weighted tuples + references
 * counted at 1 + rank. */
uint64_t slpfo_slp_size(const SlpfoSlp *h);

/* Begin enumerating answers of a query over the program. The query uses
 * the same s-expression syntax as the command-line tool. On SLPFO_OK,
 * *out owns a session handle. */
int slpfo_enum_new(const SlpfoSlp *h, const char *query, SlpfoEnum **out);

/* Pull the next answer tuple, written into buf as a NUL-terminated TSV
 * line of lexRank:nodeLabel fields. Returns 1 when a tuple was written,
 * 0 at end of enumeration, or a negative SLPFO_* code on error
 * (-SLPFO_ERR_BUFFER if cap is too small for the line plus NUL). */
int slpfo_enum_next(SlpfoEnum *h, char *buf, size_t cap);

/* Free a session at any point, including before exhaustion. */
void slpfo_enum_free(SlpfoEnum *h);

#ifdef __cplusplus
}
#endif

#endif /* SLPFO_H */
